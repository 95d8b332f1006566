//! Encoder-decoder region proposal network.
//!
//! Stem of two 3x3x3 convolutions, a halving max pool, four residual blocks
//! each followed by a max pool, then transposed-convolution upsampling
//! stages each followed by a residual block, ending in parallel 1x1x1
//! classification (one logit per anchor) and regression (four offsets per
//! anchor) heads. With four encoder pools and two decoder upsamplings the
//! output stride is 8.

use crate::attention::{
    AttentionKind, BnParams, Conv3dParams, ResidualBlock, UnitConfig,
};
use crate::error::{Error, Result};
use crate::graph::params::he_normal;
use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::kernels::conv::{Conv3dSpec, ConvTranspose3dSpec};
use crate::kernels::Activation;
use crate::tensor::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RpnConfig {
    pub stem_channels: usize,
    /// Channel width of each encoder stage.
    pub stage_widths: Vec<usize>,
    /// Residual units per encoder block.
    pub encoder_units: Vec<usize>,
    /// Residual units per decoder block; the length is the number of
    /// upsampling stages.
    pub decoder_units: Vec<usize>,
    pub decoder_width: usize,
    pub groups: usize,
    pub dropout: f64,
    pub attention: AttentionKind,
    pub reduction: usize,
    pub activation: Activation,
    pub anchor_sizes: Vec<f64>,
    /// Input patch edge length; fixes the feature extents the cross-
    /// sectional attention weights are sized for.
    pub patch: usize,
    /// Initial classification-head bias. Negative values start the
    /// detector pessimistic, which keeps the candidate pool sane while
    /// hard-negative mining only touches a couple of anchors per step.
    pub cls_bias_init: f64,
}

impl Default for RpnConfig {
    /// Paper-scale configuration.
    fn default() -> Self {
        Self {
            stem_channels: 32,
            stage_widths: vec![64, 64, 64, 64],
            encoder_units: vec![2, 3, 3, 3],
            decoder_units: vec![3, 3],
            decoder_width: 64,
            groups: 32,
            dropout: 0.3,
            attention: AttentionKind::ProposedCa,
            reduction: 16,
            activation: Activation::ModifiedRelu,
            anchor_sizes: vec![5.0, 10.0, 20.0],
            patch: 128,
            cls_bias_init: -2.0,
        }
    }
}

impl RpnConfig {
    /// Small widths for desk-scale experiments; architecture unchanged.
    pub fn desk() -> Self {
        Self {
            stem_channels: 8,
            stage_widths: vec![16, 16, 32, 32],
            encoder_units: vec![2, 3, 3, 3],
            decoder_units: vec![3, 3],
            decoder_width: 16,
            groups: 4,
            dropout: 0.3,
            attention: AttentionKind::ProposedCa,
            reduction: 4,
            activation: Activation::ModifiedRelu,
            anchor_sizes: vec![5.0, 10.0, 20.0],
            patch: 96,
            cls_bias_init: -2.0,
        }
    }

    /// Total downsampling factor between input and head grids.
    pub fn output_stride(&self) -> usize {
        let down = 1 + self.encoder_units.len();
        let up = self.decoder_units.len();
        assert!(up <= down, "more upsampling stages than poolings");
        1usize << (down - up)
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_widths.len() != self.encoder_units.len() {
            return Err(Error::config(format!(
                "stage_widths ({}) must match encoder_units ({})",
                self.stage_widths.len(),
                self.encoder_units.len()
            )));
        }
        for &w in self.stage_widths.iter().chain([&self.decoder_width]) {
            if w % self.groups != 0 {
                return Err(Error::config(format!(
                    "width {w} not divisible by groups {}",
                    self.groups
                )));
            }
        }
        if !self.anchor_sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("anchor sizes must be strictly increasing".to_string()));
        }
        let total_pool = 1usize << (1 + self.encoder_units.len());
        if self.patch % total_pool != 0 {
            return Err(Error::config(format!(
                "patch {} must be divisible by {total_pool}",
                self.patch
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)".to_string()));
        }
        // channel attention pools to a 3^3 descriptor, so the deepest stage
        // carrying attention must keep at least that extent
        let deepest = self.patch >> self.encoder_units.len();
        let needs_extent3 = matches!(
            self.attention,
            AttentionKind::ProposedCa | AttentionKind::ProposedCaSa
        );
        if needs_extent3 && deepest < 3 {
            return Err(Error::config(format!(
                "patch {} leaves the deepest attention stage at extent {deepest} (< 3);                  use a larger patch or a different attention kind",
                self.patch
            )));
        }
        Ok(())
    }
}

struct DeconvStage {
    w: ParamId,
    b: ParamId,
    bn: BnParams,
}

pub struct RpnModel {
    pub config: RpnConfig,
    stem_conv1: Conv3dParams,
    stem_bn1: BnParams,
    stem_conv2: Conv3dParams,
    stem_bn2: BnParams,
    transitions: Vec<Option<(Conv3dParams, BnParams)>>,
    enc_blocks: Vec<ResidualBlock>,
    deconvs: Vec<DeconvStage>,
    dec_blocks: Vec<ResidualBlock>,
    cls_head: Conv3dParams,
    reg_head: Conv3dParams,
}

pub struct RpnOutputs {
    /// `(N, A, G, G, G)` pre-sigmoid nodule logits.
    pub cls: Var,
    /// `(N, 4A, G, G, G)` anchor-relative offsets.
    pub reg: Var,
}

impl RpnModel {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        config: RpnConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let act = config.activation;
        let pad1 = Conv3dSpec::with_padding([1, 1, 1]);

        let stem_conv1 = Conv3dParams::new(store, "rpn.stem.conv1", config.stem_channels, 1, [3, 3, 3], pad1, rng);
        let stem_bn1 = BnParams::new(store, "rpn.stem.bn1", config.stem_channels);
        let stem_conv2 = Conv3dParams::new(
            store,
            "rpn.stem.conv2",
            config.stem_channels,
            config.stem_channels,
            [3, 3, 3],
            pad1,
            rng,
        );
        let stem_bn2 = BnParams::new(store, "rpn.stem.bn2", config.stem_channels);

        let mut transitions = Vec::new();
        let mut enc_blocks = Vec::new();
        let mut in_ch = config.stem_channels;
        for (i, (&width, &units)) in config
            .stage_widths
            .iter()
            .zip(&config.encoder_units)
            .enumerate()
        {
            // spatial extent where this block's units run
            let extent = config.patch >> (i + 1);
            transitions.push(if in_ch != width {
                let conv = Conv3dParams::new(
                    store,
                    &format!("rpn.enc{i}.transition"),
                    width,
                    in_ch,
                    [1, 1, 1],
                    Conv3dSpec::unit(),
                    rng,
                );
                let bn = BnParams::new(store, &format!("rpn.enc{i}.transition_bn"), width);
                Some((conv, bn))
            } else {
                None
            });
            let cfg = UnitConfig {
                channels: width,
                groups: config.groups,
                activation: act,
                attention: config.attention,
                reduction: config.reduction,
                feature_dhw: [extent; 3],
                zoom_in: false,
            };
            enc_blocks.push(ResidualBlock::new(store, &format!("rpn.enc{i}"), units, &cfg, rng));
            in_ch = width;
        }

        let mut deconvs = Vec::new();
        let mut dec_blocks = Vec::new();
        for (j, &units) in config.decoder_units.iter().enumerate() {
            let extent = config.patch >> (config.encoder_units.len() - j);
            let w = store.add(
                format!("rpn.dec{j}.deconv.weight"),
                he_normal(rng, vec![in_ch, config.decoder_width, 2, 2, 2], in_ch * 8),
                true,
            );
            let b = store.add(
                format!("rpn.dec{j}.deconv.bias"),
                crate::tensor::Tensor::zeros(vec![config.decoder_width]),
                true,
            );
            let bn = BnParams::new(store, &format!("rpn.dec{j}.deconv_bn"), config.decoder_width);
            deconvs.push(DeconvStage { w, b, bn });
            let cfg = UnitConfig {
                channels: config.decoder_width,
                groups: config.groups,
                activation: act,
                attention: config.attention,
                reduction: config.reduction,
                feature_dhw: [extent; 3],
                zoom_in: false,
            };
            dec_blocks.push(ResidualBlock::new(store, &format!("rpn.dec{j}"), units, &cfg, rng));
            in_ch = config.decoder_width;
        }

        let a = config.num_anchors();
        let cls_head = Conv3dParams::new(store, "rpn.head.cls", a, in_ch, [1, 1, 1], Conv3dSpec::unit(), rng);
        store.set_value(
            cls_head.b,
            crate::tensor::Tensor::full(vec![a], T::from_f64(config.cls_bias_init)),
        );
        let reg_head = Conv3dParams::new(store, "rpn.head.reg", 4 * a, in_ch, [1, 1, 1], Conv3dSpec::unit(), rng);

        Ok(Self {
            config,
            stem_conv1,
            stem_bn1,
            stem_conv2,
            stem_bn2,
            transitions,
            enc_blocks,
            deconvs,
            dec_blocks,
            cls_head,
            reg_head,
        })
    }

    /// Forward over an `(N, 1, P, P, P)` batch; head grids are `P / stride`
    /// per axis.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> RpnOutputs {
        let act = self.config.activation;
        let pool2 = |g: &mut Graph<T>, v: Var| g.max_pool3d(v, [2, 2, 2], [2, 2, 2]);

        let mut t = self.stem_conv1.forward(g, store, x);
        t = self.stem_bn1.forward(g, store, t);
        t = g.activation(t, act);
        t = self.stem_conv2.forward(g, store, t);
        t = self.stem_bn2.forward(g, store, t);
        t = g.activation(t, act);
        t = pool2(g, t);

        for (i, block) in self.enc_blocks.iter().enumerate() {
            if let Some((conv, bn)) = &self.transitions[i] {
                t = conv.forward(g, store, t);
                t = bn.forward(g, store, t);
                t = g.activation(t, act);
            }
            t = block.forward(g, store, t);
            t = pool2(g, t);
            // three encoder dropout layers, after the second, third, and
            // fourth residual blocks
            if i >= 1 {
                t = g.dropout(t, self.config.dropout);
            }
        }

        let spec = ConvTranspose3dSpec {
            stride: [2, 2, 2],
            padding: [0, 0, 0],
        };
        let n_dec = self.dec_blocks.len();
        for (j, (stage, block)) in self.deconvs.iter().zip(&self.dec_blocks).enumerate() {
            let w = g.param(store, stage.w);
            let b = g.param(store, stage.b);
            t = g.conv_transpose3d(t, w, Some(b), spec);
            t = stage.bn.forward(g, store, t);
            t = g.activation(t, act);
            t = block.forward(g, store, t);
            if j + 1 == n_dec {
                t = g.dropout(t, self.config.dropout);
            }
        }

        let cls = self.cls_head.forward(g, store, t);
        let reg = self.reg_head.forward(g, store, t);
        RpnOutputs { cls, reg }
    }
}
