//! False positive reduction network with multi-level spatial context.
//!
//! Three parallel stems specialize on the small / medium / large context
//! crops (each resized to a common target); their pooled feature maps are
//! concatenated and analysed jointly by four residual blocks whose units
//! carry zoom-in paths and channel attention, then a three-layer fully
//! connected head produces one nodule probability.

use crate::attention::{AttentionKind, BnParams, Conv3dParams, LinearParams, ResidualBlock, UnitConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, ParamStore, Var};
use crate::kernels::conv::Conv3dSpec;
use crate::kernels::Activation;
use crate::tensor::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FprConfig {
    /// Context crop sizes around a candidate center, strictly increasing.
    pub crop_sizes: [usize; 3],
    /// Every crop is resized to this edge length before the network.
    pub resize_target: usize,
    /// Channels of each per-scale stem.
    pub stem_channels: usize,
    pub block_units: Vec<usize>,
    pub groups: usize,
    pub attention: AttentionKind,
    pub reduction: usize,
    pub activation: Activation,
    pub zoom_in: bool,
    /// Widths of the first two fully connected layers; the third emits one
    /// logit.
    pub fc_widths: [usize; 2],
}

impl Default for FprConfig {
    fn default() -> Self {
        Self {
            crop_sizes: [15, 25, 40],
            resize_target: 20,
            stem_channels: 32,
            block_units: vec![2, 3, 3, 3],
            groups: 32,
            attention: AttentionKind::CbamCa,
            reduction: 16,
            activation: Activation::ModifiedRelu,
            zoom_in: true,
            fc_widths: [256, 64],
        }
    }
}

impl FprConfig {
    pub fn desk() -> Self {
        Self {
            stem_channels: 8,
            groups: 4,
            reduction: 4,
            fc_widths: [64, 16],
            ..Default::default()
        }
    }

    /// Channel width after concatenating the three per-scale stems.
    pub fn joint_channels(&self) -> usize {
        3 * self.stem_channels
    }

    /// Feature extent the residual blocks run at: one stem pool plus one
    /// pool after the first block.
    fn stage_extents(&self) -> (usize, usize) {
        (self.resize_target / 2, self.resize_target / 4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop_sizes[0] < self.crop_sizes[1] && self.crop_sizes[1] < self.crop_sizes[2]) {
            return Err(Error::config("crop sizes must be strictly increasing".to_string()));
        }
        if self.resize_target % 4 != 0 {
            return Err(Error::config("resize target must be divisible by 4".to_string()));
        }
        if self.joint_channels() % self.groups != 0 {
            return Err(Error::config(format!(
                "joint width {} not divisible by groups {}",
                self.joint_channels(),
                self.groups
            )));
        }
        Ok(())
    }
}

pub struct FprModel {
    pub config: FprConfig,
    stems: Vec<(Conv3dParams, BnParams)>,
    blocks: Vec<ResidualBlock>,
    fc1: LinearParams,
    fc2: LinearParams,
    fc3: LinearParams,
}

impl FprModel {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        config: FprConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let pad1 = Conv3dSpec::with_padding([1, 1, 1]);
        let stems = (0..3)
            .map(|i| {
                let conv = Conv3dParams::new(
                    store,
                    &format!("fpr.stem{i}.conv"),
                    config.stem_channels,
                    1,
                    [3, 3, 3],
                    pad1,
                    rng,
                );
                let bn = BnParams::new(store, &format!("fpr.stem{i}.bn"), config.stem_channels);
                (conv, bn)
            })
            .collect();

        let c = config.joint_channels();
        let (ext0, ext_rest) = config.stage_extents();
        let blocks = config
            .block_units
            .iter()
            .enumerate()
            .map(|(i, &units)| {
                let cfg = UnitConfig {
                    channels: c,
                    groups: config.groups,
                    activation: config.activation,
                    attention: config.attention,
                    reduction: config.reduction,
                    feature_dhw: [if i == 0 { ext0 } else { ext_rest }; 3],
                    zoom_in: config.zoom_in,
                };
                ResidualBlock::new(store, &format!("fpr.block{i}"), units, &cfg, rng)
            })
            .collect();

        let flat = c * ext_rest * ext_rest * ext_rest;
        let fc1 = LinearParams::new(store, "fpr.fc1", config.fc_widths[0], flat, rng);
        let fc2 = LinearParams::new(store, "fpr.fc2", config.fc_widths[1], config.fc_widths[0], rng);
        let fc3 = LinearParams::new(store, "fpr.fc3", 1, config.fc_widths[1], rng);

        Ok(Self {
            config,
            stems,
            blocks,
            fc1,
            fc2,
            fc3,
        })
    }

    /// Forward over three `(B, 1, T, T, T)` crop batches (small, medium,
    /// large context). Returns `(B, 1)` pre-sigmoid logits.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        crops: [Var; 3],
    ) -> Var {
        let act = self.config.activation;
        let t = self.config.resize_target;
        for &c in &crops {
            let s = g.shape(c);
            assert_eq!(
                &s[1..],
                &[1, t, t, t],
                "each crop batch must be (B, 1, {t}, {t}, {t})"
            );
        }

        let mut scale_maps = Vec::with_capacity(3);
        for (i, &crop) in crops.iter().enumerate() {
            let (conv, bn) = &self.stems[i];
            let mut s = conv.forward(g, store, crop);
            s = bn.forward(g, store, s);
            s = g.activation(s, act);
            s = g.max_pool3d(s, [2, 2, 2], [2, 2, 2]);
            scale_maps.push(s);
        }
        let mut t = g.concat(&scale_maps, 1);

        for (i, block) in self.blocks.iter().enumerate() {
            t = block.forward(g, store, t);
            if i == 0 {
                t = g.max_pool3d(t, [2, 2, 2], [2, 2, 2]);
            }
        }

        let s = g.shape(t).to_vec();
        let flat: usize = s[1..].iter().product();
        let t = g.reshape(t, vec![s[0], flat]);
        let t = self.fc1.forward(g, store, t);
        let t = g.activation(t, act);
        let t = self.fc2.forward(g, store, t);
        let t = g.activation(t, act);
        self.fc3.forward(g, store, t)
    }
}
