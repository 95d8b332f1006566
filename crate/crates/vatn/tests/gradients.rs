//! Finite-difference verification of every differentiable kernel and block.
//!
//! All checks run in f64 on smooth inputs (pooling inputs are built with
//! strictly distinct values so argmax routing has no ties) at a relative
//! tolerance of 1e-4.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vatn::attention::{
    AttentionKind, CbamChannelAttention, CbamSpatialAttention, ChannelAttention, ResidualUnit,
    SeChannelAttention, SpatialAttention, UnitConfig, ZoomInPath,
};
use vatn::graph::{grad_check, Mode, ParamStore};
use vatn::kernels::conv::{Conv3dSpec, ConvTranspose3dSpec};
use vatn::kernels::Activation;
use vatn::tensor::Tensor;

const TOL: f64 = 1e-4;

fn smooth(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut k = seed as f64 + 1.0;
    Tensor::from_fn(shape, |idx| {
        k += 1.0;
        let phase: f64 = idx.iter().enumerate().map(|(ax, &i)| (ax + 2) as f64 * i as f64).sum();
        (0.37 * phase + 0.11 * k).sin() * 0.8
    })
}

/// Strictly distinct values, still bounded, so pooling has unique maxima.
fn distinct(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut i = 0usize;
    Tensor::from_fn(shape, |_| {
        let v = ((i * 2654435761 + seed as usize) % 1000003) as f64 / 1000003.0;
        i += 1;
        v * 2.0 - 1.0 + i as f64 * 1e-7
    })
}

#[test]
fn conv3d_grouped_gradients() {
    let mut store = ParamStore::new();
    let x = smooth(vec![2, 4, 5, 5, 5], 0);
    let w = smooth(vec![4, 2, 3, 3, 3], 1);
    let b = smooth(vec![4], 2);
    let spec = Conv3dSpec {
        stride: [1, 1, 1],
        padding: [1, 1, 1],
        groups: 2,
    };
    let report = grad_check(
        &mut store,
        &[
            ("input".into(), x),
            ("weight".into(), w),
            ("bias".into(), b),
        ],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.conv3d(vars[0], vars[1], Some(vars[2]), spec);
            // a nonlinearity keeps the scalar objective sensitive to signs
            let y = g.activation(y, Activation::Tanh);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn conv3d_strided_gradients() {
    let mut store = ParamStore::new();
    let x = smooth(vec![1, 2, 7, 6, 7], 3);
    let w = smooth(vec![3, 2, 3, 3, 3], 4);
    let spec = Conv3dSpec {
        stride: [2, 1, 2],
        padding: [1, 0, 1],
        groups: 1,
    };
    let report = grad_check(
        &mut store,
        &[("input".into(), x), ("weight".into(), w)],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.conv3d(vars[0], vars[1], None, spec);
            let y = g.activation(y, Activation::Sigmoid);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn conv_transpose3d_gradients() {
    let mut store = ParamStore::new();
    let x = smooth(vec![1, 3, 4, 4, 4], 5);
    let w = smooth(vec![3, 2, 2, 2, 2], 6);
    let b = smooth(vec![2], 7);
    let spec = ConvTranspose3dSpec {
        stride: [2, 2, 2],
        padding: [0, 0, 0],
    };
    let report = grad_check(
        &mut store,
        &[
            ("input".into(), x),
            ("weight".into(), w),
            ("bias".into(), b),
        ],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.conv_transpose3d(vars[0], vars[1], Some(vars[2]), spec);
            let y = g.activation(y, Activation::Tanh);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn conv2d_gradients() {
    let mut store = ParamStore::new();
    let x = smooth(vec![2, 3, 6, 6], 8);
    let w = smooth(vec![2, 3, 3, 3], 9);
    let b = smooth(vec![2], 10);
    let report = grad_check(
        &mut store,
        &[
            ("input".into(), x),
            ("weight".into(), w),
            ("bias".into(), b),
        ],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.conv2d(vars[0], vars[1], Some(vars[2]), [1, 1], [1, 1]);
            let y = g.activation(y, Activation::Tanh);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn max_pool3d_gradients_tie_free() {
    let mut store = ParamStore::new();
    let x = distinct(vec![1, 2, 4, 4, 4], 11);
    let report = grad_check(
        &mut store,
        &[("input".into(), x)],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.max_pool3d(vars[0], [2, 2, 2], [2, 2, 2]);
            let y = g.activation(y, Activation::Tanh);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn adaptive_pool_gradients() {
    let mut store = ParamStore::new();
    let x = distinct(vec![1, 2, 5, 4, 5], 12);
    let report = grad_check(
        &mut store,
        &[("input".into(), x)],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let a = g.adaptive_avg_pool3d(vars[0], [3, 2, 3]);
            let m = g.adaptive_max_pool3d(vars[0], [2, 2, 2]);
            let sa = g.mean_all(a);
            let sm = g.mean_all(m);
            g.add(sa, sm)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn batch_norm_gradients_train_mode() {
    let mut store = ParamStore::<f64>::new();
    let rm = store.add("bn.running_mean", Tensor::zeros(vec![3]), false);
    let rv = store.add("bn.running_var", Tensor::full(vec![3], 1.0), false);
    let x = smooth(vec![2, 3, 3, 3, 3], 13);
    let gamma = smooth(vec![3], 14).map(|v| v + 1.5);
    let beta = smooth(vec![3], 15);
    let report = grad_check(
        &mut store,
        &[
            ("input".into(), x),
            ("gamma".into(), gamma),
            ("beta".into(), beta),
        ],
        TOL,
        Mode::Train,
        false,
        move |g, store, vars| {
            let y = g.batch_norm3d(vars[0], vars[1], vars[2], (rm, rv), store, 1e-5, 0.1);
            let y = g.activation(y, Activation::Tanh);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn linear_gradients() {
    let mut store = ParamStore::new();
    let x = smooth(vec![3, 5], 16);
    let w = smooth(vec![4, 5], 17);
    let b = smooth(vec![4], 18);
    let report = grad_check(
        &mut store,
        &[
            ("input".into(), x),
            ("weight".into(), w),
            ("bias".into(), b),
        ],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.linear(vars[0], vars[1], Some(vars[2]));
            let y = g.activation(y, Activation::Sigmoid);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn activation_gradients_all_kinds() {
    // offset away from the relu-family kink at 0
    let x = smooth(vec![4, 4], 19).map(|v| v + if v >= 0.0 { 0.05 } else { -0.05 });
    for kind in [
        Activation::Relu,
        Activation::LeakyRelu { slope: 0.1 },
        Activation::Elu { alpha: 1.0 },
        Activation::Tanh,
        Activation::Sigmoid,
        Activation::ModifiedRelu,
    ] {
        let mut store = ParamStore::new();
        let report = grad_check(
            &mut store,
            &[("input".into(), x.clone())],
            TOL,
            Mode::Eval,
            false,
            move |g, _, vars| {
                let y = g.activation(vars[0], kind);
                g.mean_all(y)
            },
        )
        .unwrap();
        assert!(report.passed(), "{kind:?}: {:#?}", report.per_input);
    }
}

#[test]
fn broadcast_mul_gradients() {
    let mut store = ParamStore::new();
    let gate = smooth(vec![1, 3, 1, 1, 1], 20);
    let f = smooth(vec![2, 3, 3, 3, 3], 21);
    let report = grad_check(
        &mut store,
        &[("gate".into(), gate), ("feature".into(), f)],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let y = g.mul(vars[0], vars[1]);
            let y = g.activation(y, Activation::Tanh);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn loss_primitive_gradients() {
    // ln, pow, clamp, smooth-l1 away from their kinks
    let mut store = ParamStore::new();
    let p = smooth(vec![6], 22).map(|v| 0.3 + 0.2 * v); // within (0, 1)
    let x = smooth(vec![6], 23).map(|v| v * 0.6); // |x| < 1 branch
    let report = grad_check(
        &mut store,
        &[("p".into(), p), ("x".into(), x)],
        TOL,
        Mode::Eval,
        false,
        |g, _, vars| {
            let lp = g.ln(vars[0]);
            let pw = g.pow_const(vars[0], 2.0);
            let sl = g.smooth_l1(vars[1]);
            let a = g.mean_all(lp);
            let b = g.mean_all(pw);
            let c = g.mean_all(sl);
            let ab = g.add(a, b);
            g.add(ab, c)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

fn unit_cfg(channels: usize, attention: AttentionKind, dhw: [usize; 3], zoom: bool) -> UnitConfig {
    UnitConfig {
        channels,
        groups: 2,
        activation: Activation::ModifiedRelu,
        attention,
        reduction: 2,
        feature_dhw: dhw,
        zoom_in: zoom,
    }
}

#[test]
fn channel_attention_block_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let ca = ChannelAttention::new(&mut store, "ca", 3, &mut rng);
    let f = smooth(vec![1, 3, 4, 4, 4], 24);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Eval,
        false,
        move |g, store, vars| {
            let (_, refined) = ca.forward(g, store, vars[0]);
            g.mean_all(refined)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn spatial_attention_block_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let sa = SpatialAttention::new(&mut store, "sa", 4, [6, 6, 6], &mut rng);
    let f = smooth(vec![1, 4, 6, 6, 6], 25);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Eval,
        false,
        move |g, store, vars| {
            let (_, refined) = sa.forward(g, store, vars[0]);
            g.mean_all(refined)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn se_attention_block_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let se = SeChannelAttention::new(&mut store, "se", 4, 2, Activation::ModifiedRelu, &mut rng);
    let f = smooth(vec![1, 4, 3, 3, 3], 26);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Eval,
        false,
        move |g, store, vars| {
            let (_, refined) = se.forward(g, store, vars[0]);
            g.mean_all(refined)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn cbam_attention_block_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let ca = CbamChannelAttention::new(&mut store, "cb_ca", 4, 2, Activation::ModifiedRelu, &mut rng);
    let sa = CbamSpatialAttention::new(&mut store, "cb_sa", &mut rng);
    // distinct values keep the max-pooled descriptor and channel max map tie-free
    let f = distinct(vec![1, 4, 3, 3, 3], 27);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Eval,
        false,
        move |g, store, vars| {
            let (_, refined) = ca.forward(g, store, vars[0]);
            let (_, refined) = sa.forward(g, store, refined);
            g.mean_all(refined)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn residual_unit_gradients_with_proposed_attention() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let cfg = unit_cfg(4, AttentionKind::ProposedCaSa, [4, 4, 4], false);
    let unit = ResidualUnit::new(&mut store, "unit", &cfg, &mut rng);
    let f = smooth(vec![1, 4, 4, 4, 4], 28);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Train,
        false,
        move |g, store, vars| {
            let y = unit.forward(g, store, vars[0]);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn zoom_in_path_gradients() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let zoom = ZoomInPath::new(&mut store, "zoom", 3, Activation::ModifiedRelu, &mut rng);
    let f = distinct(vec![1, 3, 4, 4, 4], 29);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Train,
        false,
        move |g, store, vars| {
            let y = zoom.forward(g, store, vars[0]);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}

#[test]
fn residual_unit_gradients_with_zoom_in() {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let cfg = unit_cfg(4, AttentionKind::CbamCa, [4, 4, 4], true);
    let unit = ResidualUnit::new(&mut store, "unit", &cfg, &mut rng);
    let f = distinct(vec![1, 4, 4, 4, 4], 30);
    let report = grad_check(
        &mut store,
        &[("feature".into(), f)],
        TOL,
        Mode::Train,
        false,
        move |g, store, vars| {
            let y = unit.forward(g, store, vars[0]);
            g.mean_all(y)
        },
    )
    .unwrap();
    assert!(report.passed(), "{:#?}", report.per_input);
}
