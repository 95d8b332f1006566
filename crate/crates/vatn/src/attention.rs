//! Attention units and architectural sub-blocks.
//!
//! Two fully convolutional attention designs operate on 3D feature maps:
//!
//! - Channel attention pools a feature map to a `C x 3 x 3 x 3` descriptor
//!   and infers per-channel gates with a dense 3x3x3 convolution, avoiding
//!   the MLP bottleneck of SE/CBAM at 3D scale.
//! - Cross-sectional spatial attention projects the map to one channel,
//!   runs a dedicated 2D convolution over each orthogonal cross-section
//!   (axial, coronal, sagittal), realigns and stacks the three views, and
//!   projects back to `C` channels.
//!
//! SE and CBAM channel/spatial gates are provided as 3D-generalized
//! baselines. All gates pass through a sigmoid, so attention maps lie
//! strictly in (0, 1) and refinement can only damp features.

use crate::graph::{Graph, ParamId, ParamStore, Var};
use crate::kernels::conv::{Conv3dSpec, ConvTranspose3dSpec};
use crate::kernels::Activation;
use crate::graph::params::he_normal;
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[default]
    None,
    ProposedCa,
    ProposedSa,
    ProposedCaSa,
    Se,
    CbamCa,
    CbamSa,
    CbamCaSa,
}

impl std::str::FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "proposed_ca" => Ok(Self::ProposedCa),
            "proposed_sa" => Ok(Self::ProposedSa),
            "proposed_ca_sa" => Ok(Self::ProposedCaSa),
            "se" => Ok(Self::Se),
            "cbam_ca" => Ok(Self::CbamCa),
            "cbam_sa" => Ok(Self::CbamSa),
            "cbam_ca_sa" => Ok(Self::CbamCaSa),
            other => Err(format!("unknown attention kind '{other}'")),
        }
    }
}

/// Per-stage settings shared by the residual building blocks.
#[derive(Debug, Clone)]
pub struct UnitConfig {
    pub channels: usize,
    pub groups: usize,
    pub activation: Activation,
    pub attention: AttentionKind,
    /// Reduction ratio of the SE/CBAM channel MLPs.
    pub reduction: usize,
    /// Feature extent at this stage; the cross-sectional plane convolutions
    /// are sized by it.
    pub feature_dhw: [usize; 3],
    pub zoom_in: bool,
}

fn zeros_param<T: Scalar>(store: &mut ParamStore<T>, name: String, shape: Vec<usize>) -> ParamId {
    store.add(name, Tensor::zeros(shape), true)
}

/// Batch norm parameters: learnable affine plus running statistics.
pub struct BnParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BnParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::full(vec![channels], T::one()), true),
            beta: zeros_param(store, format!("{prefix}.beta"), vec![channels]),
            running_mean: store.add(
                format!("{prefix}.running_mean"),
                Tensor::zeros(vec![channels]),
                false,
            ),
            running_var: store.add(
                format!("{prefix}.running_var"),
                Tensor::full(vec![channels], T::one()),
                false,
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.batch_norm3d(
            x,
            gamma,
            beta,
            (self.running_mean, self.running_var),
            store,
            BN_EPS,
            BN_MOMENTUM,
        )
    }
}

/// Plain 3D convolution layer parameters.
pub struct Conv3dParams {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: Conv3dSpec,
}

impl Conv3dParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        c_out: usize,
        c_in: usize,
        kernel: [usize; 3],
        spec: Conv3dSpec,
        rng: &mut R,
    ) -> Self {
        let cin_g = c_in / spec.groups;
        let fan_in = cin_g * kernel[0] * kernel[1] * kernel[2];
        let w = store.add(
            format!("{prefix}.weight"),
            he_normal(rng, vec![c_out, cin_g, kernel[0], kernel[1], kernel[2]], fan_in),
            true,
        );
        let b = zeros_param(store, format!("{prefix}.bias"), vec![c_out]);
        Self { w, b, spec }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv3d(x, w, Some(b), self.spec)
    }
}

/// Fully connected layer parameters.
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearParams {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        out_features: usize,
        in_features: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: store.add(
                format!("{prefix}.weight"),
                he_normal(rng, vec![out_features, in_features], in_features),
                true,
            ),
            b: zeros_param(store, format!("{prefix}.bias"), vec![out_features]),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }
}

/// Fully convolutional channel attention: a dense `C -> C` convolution over
/// the pooled `3^3` descriptor, gated by a sigmoid and broadcast over space.
pub struct ChannelAttention {
    pub w: ParamId,
    pub b: ParamId,
    channels: usize,
}

impl ChannelAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = channels * 27;
        Self {
            w: store.add(
                format!("{prefix}.weight"),
                he_normal(rng, vec![channels, channels, 3, 3, 3], fan_in),
                true,
            ),
            b: zeros_param(store, format!("{prefix}.bias"), vec![channels]),
            channels,
        }
    }

    /// Number of learnable scalars: `27 C^2 + C`.
    pub fn param_count(&self) -> usize {
        27 * self.channels * self.channels + self.channels
    }

    /// Returns `(A_c, F')` with `A_c: (N, C, 1, 1, 1)` and `F' = A_c (*) F`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: Var,
    ) -> (Var, Var) {
        let s = g.shape(f);
        assert!(
            s[2] >= 3 && s[3] >= 3 && s[4] >= 3,
            "channel attention needs spatial extent >= 3, got {s:?}"
        );
        let e = g.adaptive_avg_pool3d(f, [3, 3, 3]);
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let z = g.conv3d(e, w, Some(b), Conv3dSpec::unit());
        let a = g.sigmoid(z);
        let refined = g.mul(a, f);
        (a, refined)
    }
}

/// Cross-sectional spatial attention over the three orthogonal planes.
pub struct SpatialAttention {
    pub proj_in_w: ParamId,
    pub proj_in_b: ParamId,
    pub axial_w: ParamId,
    pub axial_b: ParamId,
    pub coronal_w: ParamId,
    pub coronal_b: ParamId,
    pub sagittal_w: ParamId,
    pub sagittal_b: ParamId,
    pub proj_out_w: ParamId,
    pub proj_out_b: ParamId,
}

impl SpatialAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        dhw: [usize; 3],
        rng: &mut R,
    ) -> Self {
        let [d, h, w] = dhw;
        let plane = |store: &mut ParamStore<T>, name: String, c: usize, rng: &mut R| {
            store.add(name, he_normal(rng, vec![c, c, 3, 3], c * 9), true)
        };
        Self {
            proj_in_w: store.add(
                format!("{prefix}.proj_in.weight"),
                he_normal(rng, vec![1, channels, 1, 1, 1], channels),
                true,
            ),
            proj_in_b: zeros_param(store, format!("{prefix}.proj_in.bias"), vec![1]),
            axial_w: plane(store, format!("{prefix}.axial.weight"), d, rng),
            axial_b: zeros_param(store, format!("{prefix}.axial.bias"), vec![d]),
            coronal_w: plane(store, format!("{prefix}.coronal.weight"), h, rng),
            coronal_b: zeros_param(store, format!("{prefix}.coronal.bias"), vec![h]),
            sagittal_w: plane(store, format!("{prefix}.sagittal.weight"), w, rng),
            sagittal_b: zeros_param(store, format!("{prefix}.sagittal.bias"), vec![w]),
            proj_out_w: store.add(
                format!("{prefix}.proj_out.weight"),
                he_normal(rng, vec![channels, 3, 1, 1, 1], 3),
                true,
            ),
            proj_out_b: zeros_param(store, format!("{prefix}.proj_out.bias"), vec![channels]),
        }
    }

    /// Returns `(A_s, F')` with `A_s: (N, C, D, H, W)` and `F' = A_s (*) F`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: Var,
    ) -> (Var, Var) {
        let s = g.shape(f).to_vec();
        let (n, d, h, w) = (s[0], s[2], s[3], s[4]);

        // project to a single channel, then view the volume as a stack of
        // 2D planes along each anatomical axis
        let piw = g.param(store, self.proj_in_w);
        let pib = g.param(store, self.proj_in_b);
        let e5 = g.conv3d(f, piw, Some(pib), Conv3dSpec::unit());
        let e = g.reshape(e5, vec![n, d, h, w]);

        // axial: channels = D, image H x W
        let aw = g.param(store, self.axial_w);
        let ab = g.param(store, self.axial_b);
        let e_axi = g.conv2d(e, aw, Some(ab), [1, 1], [1, 1]);

        // coronal: channels = H, image D x W
        let cw = g.param(store, self.coronal_w);
        let cb = g.param(store, self.coronal_b);
        let cor_view = g.permute(e, &[0, 2, 1, 3]);
        let cor = g.conv2d(cor_view, cw, Some(cb), [1, 1], [1, 1]);
        let e_cor = g.permute(cor, &[0, 2, 1, 3]);

        // sagittal: channels = W, image D x H
        let sw = g.param(store, self.sagittal_w);
        let sb = g.param(store, self.sagittal_b);
        let sag_view = g.permute(e, &[0, 3, 1, 2]);
        let sag = g.conv2d(sag_view, sw, Some(sb), [1, 1], [1, 1]);
        let e_sag = g.permute(sag, &[0, 2, 3, 1]);

        let e_cs = g.stack(&[e_axi, e_cor, e_sag], 1);
        let pow = g.param(store, self.proj_out_w);
        let pob = g.param(store, self.proj_out_b);
        let z = g.conv3d(e_cs, pow, Some(pob), Conv3dSpec::unit());
        let a = g.sigmoid(z);
        let refined = g.mul(a, f);
        (a, refined)
    }
}

/// Squeeze-and-excitation channel gate: global average pool to `C`, a
/// two-layer MLP with reduction `r`, sigmoid.
pub struct SeChannelAttention {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    activation: Activation,
    channels: usize,
    reduction: usize,
}

impl SeChannelAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        assert!(
            channels % reduction == 0,
            "reduction {reduction} must divide channels {channels}"
        );
        let hidden = channels / reduction;
        Self {
            fc1_w: store.add(
                format!("{prefix}.fc1.weight"),
                he_normal(rng, vec![hidden, channels], channels),
                true,
            ),
            fc1_b: zeros_param(store, format!("{prefix}.fc1.bias"), vec![hidden]),
            fc2_w: store.add(
                format!("{prefix}.fc2.weight"),
                he_normal(rng, vec![channels, hidden], hidden),
                true,
            ),
            fc2_b: zeros_param(store, format!("{prefix}.fc2.bias"), vec![channels]),
            activation,
            channels,
            reduction,
        }
    }

    /// Number of learnable scalars: `2 C^2 / r + C / r + C`.
    pub fn param_count(&self) -> usize {
        2 * self.channels * self.channels / self.reduction
            + self.channels / self.reduction
            + self.channels
    }

    fn mlp<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, desc: Var) -> Var {
        let w1 = g.param(store, self.fc1_w);
        let b1 = g.param(store, self.fc1_b);
        let w2 = g.param(store, self.fc2_w);
        let b2 = g.param(store, self.fc2_b);
        let hidden = g.linear(desc, w1, Some(b1));
        let hidden = g.activation(hidden, self.activation);
        g.linear(hidden, w2, Some(b2))
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: Var,
    ) -> (Var, Var) {
        let s = g.shape(f).to_vec();
        let (n, c) = (s[0], s[1]);
        let pooled = g.adaptive_avg_pool3d(f, [1, 1, 1]);
        let desc = g.reshape(pooled, vec![n, c]);
        let z = self.mlp(g, store, desc);
        let z5 = g.reshape(z, vec![n, c, 1, 1, 1]);
        let a = g.sigmoid(z5);
        let refined = g.mul(a, f);
        (a, refined)
    }
}

/// CBAM channel gate: a shared MLP applied to both the average- and
/// max-pooled descriptors, logits summed before the sigmoid.
pub struct CbamChannelAttention {
    mlp: SeChannelAttention,
}

impl CbamChannelAttention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        reduction: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            mlp: SeChannelAttention::new(store, prefix, channels, reduction, activation, rng),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: Var,
    ) -> (Var, Var) {
        let s = g.shape(f).to_vec();
        let (n, c) = (s[0], s[1]);
        let avg = g.adaptive_avg_pool3d(f, [1, 1, 1]);
        let avg = g.reshape(avg, vec![n, c]);
        let max = g.adaptive_max_pool3d(f, [1, 1, 1]);
        let max = g.reshape(max, vec![n, c]);
        let za = self.mlp.mlp(g, store, avg);
        let zm = self.mlp.mlp(g, store, max);
        let z = g.add(za, zm);
        let z5 = g.reshape(z, vec![n, c, 1, 1, 1]);
        let a = g.sigmoid(z5);
        let refined = g.mul(a, f);
        (a, refined)
    }
}

/// CBAM spatial gate lifted to 3D: channel-wise mean and max maps summed,
/// one `3^3` convolution, sigmoid, broadcast over channels.
pub struct CbamSpatialAttention {
    pub w: ParamId,
    pub b: ParamId,
}

impl CbamSpatialAttention {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, rng: &mut R) -> Self {
        Self {
            w: store.add(
                format!("{prefix}.weight"),
                he_normal(rng, vec![1, 1, 3, 3, 3], 27),
                true,
            ),
            b: zeros_param(store, format!("{prefix}.bias"), vec![1]),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        f: Var,
    ) -> (Var, Var) {
        let mean_map = g.mean_axis(f, 1);
        let max_map = g.max_axis(f, 1);
        let pooled = g.add(mean_map, max_map);
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let z = g.conv3d(pooled, w, Some(b), Conv3dSpec::with_padding([1, 1, 1]));
        let a = g.sigmoid(z);
        let refined = g.mul(a, f);
        (a, refined)
    }
}

/// Attention insert for a residual unit. Combined variants apply the
/// channel gate first, then the spatial gate.
pub enum AttentionBlock {
    None,
    ProposedCa(ChannelAttention),
    ProposedSa(SpatialAttention),
    ProposedCaSa(ChannelAttention, SpatialAttention),
    Se(SeChannelAttention),
    CbamCa(CbamChannelAttention),
    CbamSa(CbamSpatialAttention),
    CbamCaSa(CbamChannelAttention, CbamSpatialAttention),
}

impl AttentionBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &UnitConfig,
        rng: &mut R,
    ) -> Self {
        let c = cfg.channels;
        match cfg.attention {
            AttentionKind::None => Self::None,
            AttentionKind::ProposedCa => {
                Self::ProposedCa(ChannelAttention::new(store, &format!("{prefix}.ca"), c, rng))
            }
            AttentionKind::ProposedSa => Self::ProposedSa(SpatialAttention::new(
                store,
                &format!("{prefix}.sa"),
                c,
                cfg.feature_dhw,
                rng,
            )),
            AttentionKind::ProposedCaSa => Self::ProposedCaSa(
                ChannelAttention::new(store, &format!("{prefix}.ca"), c, rng),
                SpatialAttention::new(store, &format!("{prefix}.sa"), c, cfg.feature_dhw, rng),
            ),
            AttentionKind::Se => Self::Se(SeChannelAttention::new(
                store,
                &format!("{prefix}.se"),
                c,
                cfg.reduction,
                cfg.activation,
                rng,
            )),
            AttentionKind::CbamCa => Self::CbamCa(CbamChannelAttention::new(
                store,
                &format!("{prefix}.cbam_ca"),
                c,
                cfg.reduction,
                cfg.activation,
                rng,
            )),
            AttentionKind::CbamSa => {
                Self::CbamSa(CbamSpatialAttention::new(store, &format!("{prefix}.cbam_sa"), rng))
            }
            AttentionKind::CbamCaSa => Self::CbamCaSa(
                CbamChannelAttention::new(
                    store,
                    &format!("{prefix}.cbam_ca"),
                    c,
                    cfg.reduction,
                    cfg.activation,
                    rng,
                ),
                CbamSpatialAttention::new(store, &format!("{prefix}.cbam_sa"), rng),
            ),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, f: Var) -> Var {
        match self {
            Self::None => f,
            Self::ProposedCa(ca) => ca.forward(g, store, f).1,
            Self::ProposedSa(sa) => sa.forward(g, store, f).1,
            Self::ProposedCaSa(ca, sa) => {
                let refined = ca.forward(g, store, f).1;
                sa.forward(g, store, refined).1
            }
            Self::Se(se) => se.forward(g, store, f).1,
            Self::CbamCa(ca) => ca.forward(g, store, f).1,
            Self::CbamSa(sa) => sa.forward(g, store, f).1,
            Self::CbamCaSa(ca, sa) => {
                let refined = ca.forward(g, store, f).1;
                sa.forward(g, store, refined).1
            }
        }
    }
}

/// Up-sample by 2 with a transposed convolution, normalize, activate, and
/// max-pool back down: emphasizes small structures while preserving shape.
pub struct ZoomInPath {
    pub deconv_w: ParamId,
    pub deconv_b: ParamId,
    pub bn: BnParams,
    activation: Activation,
}

impl ZoomInPath {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        Self {
            deconv_w: store.add(
                format!("{prefix}.deconv.weight"),
                he_normal(rng, vec![channels, channels, 2, 2, 2], channels * 8),
                true,
            ),
            deconv_b: zeros_param(store, format!("{prefix}.deconv.bias"), vec![channels]),
            bn: BnParams::new(store, &format!("{prefix}.bn"), channels),
            activation,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = g.param(store, self.deconv_w);
        let b = g.param(store, self.deconv_b);
        let spec = ConvTranspose3dSpec {
            stride: [2, 2, 2],
            padding: [0, 0, 0],
        };
        let up = g.conv_transpose3d(x, w, Some(b), spec);
        let up = self.bn.forward(g, store, up);
        let up = g.activation(up, self.activation);
        g.max_pool3d(up, [2, 2, 2], [2, 2, 2])
    }
}

/// Bottleneck-style residual unit: 1x1x1, grouped 3x3x3, 1x1x1 convolutions
/// with batch norm after each, the attention insert on the branch output,
/// then the identity skip and the stage activation.
pub struct ResidualUnit {
    conv1: Conv3dParams,
    bn1: BnParams,
    conv2: Conv3dParams,
    bn2: BnParams,
    conv3: Conv3dParams,
    bn3: BnParams,
    attention: AttentionBlock,
    zoom: Option<ZoomInPath>,
    activation: Activation,
}

impl ResidualUnit {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &UnitConfig,
        rng: &mut R,
    ) -> Self {
        let c = cfg.channels;
        assert!(
            c % cfg.groups == 0,
            "groups {} must divide channels {c}",
            cfg.groups
        );
        let conv1 = Conv3dParams::new(
            store,
            &format!("{prefix}.conv1"),
            c,
            c,
            [1, 1, 1],
            Conv3dSpec::unit(),
            rng,
        );
        let bn1 = BnParams::new(store, &format!("{prefix}.bn1"), c);
        let conv2 = Conv3dParams::new(
            store,
            &format!("{prefix}.conv2"),
            c,
            c,
            [3, 3, 3],
            Conv3dSpec {
                stride: [1, 1, 1],
                padding: [1, 1, 1],
                groups: cfg.groups,
            },
            rng,
        );
        let bn2 = BnParams::new(store, &format!("{prefix}.bn2"), c);
        let conv3 = Conv3dParams::new(
            store,
            &format!("{prefix}.conv3"),
            c,
            c,
            [1, 1, 1],
            Conv3dSpec::unit(),
            rng,
        );
        let bn3 = BnParams::new(store, &format!("{prefix}.bn3"), c);
        let attention = AttentionBlock::new(store, &format!("{prefix}.attn"), cfg, rng);
        let zoom = cfg
            .zoom_in
            .then(|| ZoomInPath::new(store, &format!("{prefix}.zoom"), c, cfg.activation, rng));
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            attention,
            zoom,
            activation: cfg.activation,
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Var {
        let t = self.conv1.forward(g, store, x);
        let t = self.bn1.forward(g, store, t);
        let t = g.activation(t, self.activation);
        let t = self.conv2.forward(g, store, t);
        let t = self.bn2.forward(g, store, t);
        let t = g.activation(t, self.activation);
        let t = self.conv3.forward(g, store, t);
        let t = self.bn3.forward(g, store, t);
        let t = self.attention.forward(g, store, t);
        let mut sum = g.add(t, x);
        if let Some(zoom) = &self.zoom {
            let z = zoom.forward(g, store, x);
            sum = g.add(sum, z);
        }
        g.activation(sum, self.activation)
    }
}

/// A sequence of residual units at one stage.
pub struct ResidualBlock {
    units: Vec<ResidualUnit>,
}

impl ResidualBlock {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        prefix: &str,
        n_units: usize,
        cfg: &UnitConfig,
        rng: &mut R,
    ) -> Self {
        let units = (0..n_units)
            .map(|i| ResidualUnit::new(store, &format!("{prefix}.unit{i}"), cfg, rng))
            .collect();
        Self { units }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mut x: Var) -> Var {
        for unit in &self.units {
            x = unit.forward(g, store, x);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Mode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feature(n: usize, c: usize, e: usize) -> Tensor<f64> {
        Tensor::from_fn(vec![n, c, e, e, e], |i| {
            ((i[1] * 13 + i[2] * 7 + i[3] * 3 + i[4]) as f64 * 0.37).sin()
        })
    }

    #[test]
    fn zero_weights_give_half_gate() {
        // sigmoid(0) = 0.5 exactly, so F' = 0.5 * F
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ca = ChannelAttention::new(&mut store, "ca", 4, &mut rng);
        store.set_value(ca.w, Tensor::zeros(vec![4, 4, 3, 3, 3]));

        let mut g = Graph::new(Mode::Eval);
        let f = g.input(feature(1, 4, 5));
        let (a, refined) = ca.forward(&mut g, &store, f);
        assert_eq!(g.shape(a), &[1, 4, 1, 1, 1]);
        assert!(g.value(a).data().iter().all(|&v| v == 0.5));
        for (r, x) in g.value(refined).data().iter().zip(g.value(f).data()) {
            assert_eq!(*r, 0.5 * x);
        }
    }

    #[test]
    fn channel_gate_constant_per_channel() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ca = ChannelAttention::new(&mut store, "ca", 3, &mut rng);
        let mut g = Graph::new(Mode::Eval);
        let f = g.input(feature(1, 3, 6));
        let (_, refined) = ca.forward(&mut g, &store, f);
        // F'/F is constant across spatial positions within a channel
        // (checked away from zeros of F, where the ratio is undefined)
        let fv = g.value(f);
        let rv = g.value(refined);
        for c in 0..3 {
            let base = c * 216;
            let mut ratio = None;
            for i in 0..216 {
                let x = fv.data()[base + i];
                if x.abs() < 1e-6 {
                    continue;
                }
                let r = rv.data()[base + i] / x;
                let first = *ratio.get_or_insert(r);
                assert!((r - first).abs() < 1e-10);
            }
            assert!(ratio.is_some());
        }
    }

    #[test]
    fn spatial_gate_zero_weights_and_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sa = SpatialAttention::new(&mut store, "sa", 4, [5, 6, 7], &mut rng);
        // zero every plane conv and the projection out
        for id in [sa.axial_w, sa.coronal_w, sa.sagittal_w, sa.proj_out_w] {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(shape));
        }
        let mut g = Graph::new(Mode::Eval);
        let f = g.input(Tensor::from_fn(vec![1, 4, 5, 6, 7], |i| {
            (i[2] as f64 - i[3] as f64) * 0.2 + i[4] as f64 * 0.1
        }));
        let (a, refined) = sa.forward(&mut g, &store, f);
        assert_eq!(g.shape(a), &[1, 4, 5, 6, 7]);
        assert!(g.value(a).data().iter().all(|&v| v == 0.5));
        for (r, x) in g.value(refined).data().iter().zip(g.value(f).data()) {
            assert_eq!(*r, 0.5 * x);
        }
    }

    #[test]
    fn attention_maps_strictly_in_unit_interval() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = UnitConfig {
            channels: 4,
            groups: 2,
            activation: Activation::ModifiedRelu,
            reduction: 2,
            attention: AttentionKind::None,
            feature_dhw: [5, 5, 5],
            zoom_in: false,
        };
        let f_t = feature(1, 4, 5);

        let ca = ChannelAttention::new(&mut store, "t.ca", 4, &mut rng);
        let sa = SpatialAttention::new(&mut store, "t.sa", 4, [5, 5, 5], &mut rng);
        let se = SeChannelAttention::new(&mut store, "t.se", 4, 2, cfg.activation, &mut rng);
        let cb = CbamChannelAttention::new(&mut store, "t.cb", 4, 2, cfg.activation, &mut rng);
        let cs = CbamSpatialAttention::new(&mut store, "t.cs", &mut rng);

        let mut g = Graph::new(Mode::Eval);
        let f = g.input(f_t);
        let maps = [
            ca.forward(&mut g, &store, f).0,
            sa.forward(&mut g, &store, f).0,
            se.forward(&mut g, &store, f).0,
            cb.forward(&mut g, &store, f).0,
            cs.forward(&mut g, &store, f).0,
        ];
        for a in maps {
            assert!(g.value(a).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        // |F'| <= |F| elementwise whenever the gate is in (0,1)
        let (_, refined) = ca.forward(&mut g, &store, f);
        for (r, x) in g.value(refined).data().iter().zip(g.value(f).data()) {
            assert!(r.abs() <= x.abs() + 1e-15);
        }
    }

    #[test]
    fn se_reduction_must_divide() {
        let result = std::panic::catch_unwind(|| {
            let mut store = ParamStore::<f64>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            SeChannelAttention::new(&mut store, "se", 6, 4, Activation::Relu, &mut rng)
        });
        assert!(result.is_err());
    }

    #[test]
    fn parameter_count_trade() {
        // documents the complexity trade at C=32, r=16:
        // proposed dense conv gate 27*32^2 + 32 = 27,680 vs SE 2*32^2/16 + 32/16 + 32 = 162
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ca = ChannelAttention::new(&mut store, "c.ca", 32, &mut rng);
        let se = SeChannelAttention::new(&mut store, "c.se", 32, 16, Activation::Relu, &mut rng);
        assert_eq!(ca.param_count(), 27_680);
        assert_eq!(se.param_count(), 2 * 32 * 32 / 16 + 32 / 16 + 32);
        // stored tensors agree with the closed forms
        let ca_stored: usize = [ca.w, ca.b].iter().map(|&id| store.value(id).numel()).sum();
        assert_eq!(ca_stored, ca.param_count());
        let se_stored: usize = [se.fc1_w, se.fc1_b, se.fc2_w, se.fc2_b]
            .iter()
            .map(|&id| store.value(id).numel())
            .sum();
        assert_eq!(se_stored, se.param_count());
    }

    #[test]
    fn cbam_channel_constant_input_doubles_logit() {
        // constant per-channel input: avg and max descriptors coincide, so
        // the pre-sigmoid logit is exactly 2 * MLP(mean)
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cb = CbamChannelAttention::new(&mut store, "cb", 4, 2, Activation::Relu, &mut rng);
        let se = &cb.mlp;

        let means = [0.3, -0.5, 1.1, 0.0];
        let f_t = Tensor::<f64>::from_fn(vec![1, 4, 3, 3, 3], |i| means[i[1]]);
        let mut g = Graph::new(Mode::Eval);
        let f = g.input(f_t);
        let (a, _) = cb.forward(&mut g, &store, f);

        let desc = g.input(Tensor::new(vec![1, 4], means.to_vec()));
        let z = se.mlp(&mut g, &store, desc);
        for (av, zv) in g.value(a).data().iter().zip(g.value(z).data()) {
            let expect = 1.0 / (1.0 + (-2.0 * zv).exp());
            assert!((av - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_unit_identity_with_zero_branch() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = UnitConfig {
            channels: 4,
            groups: 2,
            activation: Activation::Relu,
            attention: AttentionKind::None,
            reduction: 2,
            feature_dhw: [4, 4, 4],
            zoom_in: false,
        };
        let unit = ResidualUnit::new(&mut store, "u", &cfg, &mut rng);
        // zero the final conv so the branch contributes nothing
        let shape = store.value(unit.conv3.w).shape().to_vec();
        store.set_value(unit.conv3.w, Tensor::zeros(shape));

        let mut g = Graph::new(Mode::Eval);
        let x = g.input(feature(1, 4, 4));
        let y = unit.forward(&mut g, &store, x);
        for (a, b) in g.value(y).data().iter().zip(g.value(x).data()) {
            assert!((a - b.max(0.0)).abs() < 1e-12, "out = relu(x) when branch is zero");
        }
    }

    #[test]
    fn zoom_in_preserves_shape() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zoom = ZoomInPath::new(&mut store, "z", 8, Activation::Relu, &mut rng);
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(feature(1, 8, 10));
        let y = zoom.forward(&mut g, &store, x);
        assert_eq!(g.shape(y), &[1, 8, 10, 10, 10]);

        // odd extents restore as well: up(2n+1) = 4n+2, pool -> 2n+1
        let x_odd = g.input(feature(1, 8, 5));
        let y_odd = zoom.forward(&mut g, &store, x_odd);
        assert_eq!(g.shape(y_odd), &[1, 8, 5, 5, 5]);
    }

    #[test]
    fn zoom_in_zero_weights_relu_gives_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let zoom = ZoomInPath::new(&mut store, "z", 4, Activation::Relu, &mut rng);
        let shape = store.value(zoom.deconv_w).shape().to_vec();
        store.set_value(zoom.deconv_w, Tensor::zeros(shape));
        let mut g = Graph::new(Mode::Eval);
        let x = g.input(feature(1, 4, 6));
        let y = zoom.forward(&mut g, &store, x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
