//! Reverse-mode differentiation over tensor ops.
//!
//! A [`Graph`] records each operation as it executes (forward is eager) and
//! [`Graph::backward`] replays the tape in reverse. Every node's backward
//! consumes an upstream gradient of exactly its output shape and emits
//! gradients of exactly each input shape; gradients of shared inputs
//! accumulate additively.
//!
//! Values are immutable once produced. A graph is single-threaded; distinct
//! graphs may run on distinct threads, and the kernels they call may split
//! work internally.

pub mod gradcheck;
pub mod params;

pub use gradcheck::{grad_check, GradCheckReport};
pub use params::{ParamId, ParamStore};

use crate::kernels::{
    self, activation::Activation, conv::Conv3dSpec, conv::ConvTranspose3dSpec,
    elementwise::BinaryKind,
};
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T: Scalar> {
    Leaf,
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: Conv3dSpec,
    },
    ConvTranspose3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvTranspose3dSpec,
    },
    MaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool3d {
        x: Var,
        out: [usize; 3],
    },
    AdaptiveMaxPool3d {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Tensor<T>,
        invstd: Tensor<T>,
        train: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Activation {
        x: Var,
        kind: Activation,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    MulScalar {
        x: Var,
        c: f64,
    },
    AddScalar {
        x: Var,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Permute {
        x: Var,
        order: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    SelectRows {
        x: Var,
        idx: Arc<Vec<usize>>,
    },
    MeanAxis {
        x: Var,
        axis: usize,
    },
    MaxAxis {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanAll {
        x: Var,
    },
    SumAll {
        x: Var,
    },
    Ln {
        x: Var,
    },
    PowConst {
        x: Var,
        p: f64,
    },
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
    SmoothL1 {
        x: Var,
    },
    Dropout {
        x: Var,
        scale: f64,
        mask: Vec<u8>,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    param: Option<ParamId>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    mode: Mode,
    rng: ChaCha8Rng,
    stat_updates: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    /// The seed drives dropout masks; replaying the same op sequence with the
    /// same seed reproduces them exactly.
    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
            stat_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Insert a parameter value as a leaf; `backward_params` later routes its
    /// gradient back into the store entry.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    /// Pending running-statistic updates recorded by train-mode batch norm.
    pub fn take_stat_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.stat_updates)
    }

    // ---- ops ----

    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv3dSpec) -> Var {
        let y = kernels::conv3d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        );
        self.push(y, Op::Conv3d { x, w, b, spec })
    }

    pub fn conv_transpose3d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvTranspose3dSpec,
    ) -> Var {
        let y = kernels::conv_transpose3d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            &spec,
        );
        self.push(y, Op::ConvTranspose3d { x, w, b, spec })
    }

    /// 2-D convolution on `(N, C, H, W)`, recorded through the 3-D kernel
    /// with a unit depth axis.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 2], padding: [usize; 2]) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert_eq!(xs.len(), 4, "conv2d expects (N, C, H, W)");
        assert_eq!(ws.len(), 4, "conv2d weight expects (C_out, C_in, kH, kW)");
        let x5 = self.reshape(x, vec![xs[0], xs[1], 1, xs[2], xs[3]]);
        let w5 = self.reshape(w, vec![ws[0], ws[1], 1, ws[2], ws[3]]);
        let spec = Conv3dSpec {
            stride: [1, stride[0], stride[1]],
            padding: [0, padding[0], padding[1]],
            groups: 1,
        };
        let y5 = self.conv3d(x5, w5, b, spec);
        let ys = self.shape(y5).to_vec();
        self.reshape(y5, vec![ys[0], ys[1], ys[3], ys[4]])
    }

    pub fn max_pool3d(&mut self, x: Var, kernel: [usize; 3], stride: [usize; 3]) -> Var {
        let (y, argmax) = kernels::max_pool3d(self.value(x), kernel, stride);
        self.push(y, Op::MaxPool3d { x, argmax })
    }

    pub fn adaptive_avg_pool3d(&mut self, x: Var, out: [usize; 3]) -> Var {
        let y = kernels::adaptive_avg_pool3d(self.value(x), out);
        self.push(y, Op::AdaptiveAvgPool3d { x, out })
    }

    pub fn adaptive_max_pool3d(&mut self, x: Var, out: [usize; 3]) -> Var {
        let (y, argmax) = kernels::adaptive_max_pool3d(self.value(x), out);
        self.push(y, Op::AdaptiveMaxPool3d { x, argmax })
    }

    /// Batch norm reads running statistics straight from the store (they are
    /// state, not differentiated inputs); train mode queues their update.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm3d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (ParamId, ParamId),
        store: &ParamStore<T>,
        eps: f64,
        momentum: f64,
    ) -> Var {
        let train = self.mode == Mode::Train;
        let out = kernels::batch_norm3d(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            store.value(running.0),
            store.value(running.1),
            train,
            eps,
            momentum,
        );
        if let Some((nm, nv)) = out.new_running {
            self.stat_updates.push((running.0, nm));
            self.stat_updates.push((running.1, nv));
        }
        self.push(
            out.y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean: out.mean,
                invstd: out.invstd,
                train,
            },
        )
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let y = kernels::linear(self.value(x), self.value(w), b.map(|b| self.value(b)));
        self.push(y, Op::Linear { x, w, b })
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let y = kernels::activation(self.value(x), kind);
        self.push(y, Op::Activation { x, kind })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Var {
        let y = kernels::broadcast_binary(self.value(a), self.value(b), kind);
        self.push(y, Op::Binary { a, b, kind })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let cc = T::from_f64(c);
        let y = self.value(x).map(|v| v * cc);
        self.push(y, Op::MulScalar { x, c })
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let cc = T::from_f64(c);
        let y = self.value(x).map(|v| v + cc);
        self.push(y, Op::AddScalar { x })
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        assert!(!xs.is_empty());
        let first = self.shape(xs[0]).to_vec();
        let rank = first.len();
        assert!(axis < rank);
        let mut out_shape = first.clone();
        out_shape[axis] = 0;
        for &v in xs {
            let s = self.shape(v);
            assert_eq!(s.len(), rank, "concat rank mismatch");
            for (ax, (&a, &b)) in s.iter().zip(&first).enumerate() {
                if ax != axis {
                    assert_eq!(a, b, "concat shape mismatch on axis {ax}");
                }
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let len = t.shape()[axis] * inner;
                let src = &t.data()[o * len..(o + 1) * len];
                data.extend_from_slice(src);
            }
        }
        let y = Tensor::new(out_shape, data);
        self.push(
            y,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        )
    }

    /// Stack along a fresh axis inserted at `axis`.
    pub fn stack(&mut self, xs: &[Var], axis: usize) -> Var {
        let expanded: Vec<Var> = xs
            .iter()
            .map(|&v| {
                let mut s = self.shape(v).to_vec();
                s.insert(axis, 1);
                self.reshape(v, s)
            })
            .collect();
        self.concat(&expanded, axis)
    }

    pub fn permute(&mut self, x: Var, order: &[usize]) -> Var {
        let y = self.value(x).permute(order);
        self.push(
            y,
            Op::Permute {
                x,
                order: order.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let y = self.value(x).reshape(shape);
        self.push(y, Op::Reshape { x })
    }

    /// Select rows of a 2-D tensor by index (gather); backward scatters.
    pub fn select_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Var {
        let t = self.value(x);
        let s = t.shape();
        assert_eq!(s.len(), 2, "select_rows expects a 2-D tensor");
        let cols = s[1];
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx.iter() {
            assert!(r < s[0], "row index {r} out of bounds for {} rows", s[0]);
            data.extend_from_slice(&t.data()[r * cols..(r + 1) * cols]);
        }
        let y = Tensor::new(vec![idx.len(), cols], data);
        self.push(y, Op::SelectRows { x, idx })
    }

    /// Mean over one axis, keeping it with size 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let len = T::from_f64(shape[axis] as f64);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for a in 0..shape[axis] {
                let base = (o * shape[axis] + a) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        for v in &mut data {
            *v /= len;
        }
        let y = Tensor::new(out_shape, data);
        self.push(y, Op::MeanAxis { x, axis })
    }

    /// Max over one axis, keeping it with size 1. Ties take the first
    /// occurrence in scan order.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Var {
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let mut out_shape = shape.clone();
        out_shape[axis] = 1;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut data = vec![T::neg_infinity(); outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for a in 0..shape[axis] {
                let base = (o * shape[axis] + a) * inner;
                for i in 0..inner {
                    let v = src[base + i];
                    let oi = o * inner + i;
                    if v > data[oi] {
                        data[oi] = v;
                        argmax[oi] = base + i;
                    }
                }
            }
        }
        let y = Tensor::new(out_shape, data);
        self.push(y, Op::MaxAxis { x, argmax })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::MeanAll { x })
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::SumAll { x })
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.ln());
        self.push(y, Op::Ln { x })
    }

    pub fn pow_const(&mut self, x: Var, p: f64) -> Var {
        let pc = T::from_f64(p);
        let y = self.value(x).map(|v| v.powf(pc));
        self.push(y, Op::PowConst { x, p })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::from_f64(lo), T::from_f64(hi));
        let y = self.value(x).map(|v| if v < l { l } else if v > h { h } else { v });
        self.push(y, Op::Clamp { x, lo, hi })
    }

    /// Elementwise piecewise loss: `|x|` when `|x| > 1`, else `x^2`.
    pub fn smooth_l1(&mut self, x: Var) -> Var {
        let one = T::one();
        let y = self.value(x).map(|v| if v.abs() > one { v.abs() } else { v * v });
        self.push(y, Op::SmoothL1 { x })
    }

    /// Inverted dropout: zero with probability `rate`, scale survivors by
    /// `1/(1-rate)`. Identity in eval mode.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        if self.mode == Mode::Eval || rate == 0.0 {
            return x;
        }
        let t = self.value(x).clone();
        let mask: Vec<u8> = (0..t.numel())
            .map(|_| u8::from(self.rng.random::<f64>() >= rate))
            .collect();
        let scale = 1.0 / (1.0 - rate);
        let sc = T::from_f64(scale);
        let mut data = Vec::with_capacity(t.numel());
        for (&v, &m) in t.data().iter().zip(&mask) {
            data.push(if m == 1 { v * sc } else { T::zero() });
        }
        let y = Tensor::new(t.shape().to_vec(), data);
        self.push(y, Op::Dropout { x, scale, mask })
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Returns one gradient slot per node.
    pub fn backward(&self, root: Var) -> Vec<Option<Tensor<T>>> {
        assert_eq!(
            self.value(root).numel(),
            1,
            "backward root must be a scalar"
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape().to_vec(), T::one()));

        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.backprop_node(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        grads
    }

    /// Backward plus accumulation of parameter gradients into the store.
    pub fn backward_params(&self, root: Var, store: &mut ParamStore<T>) -> Vec<Option<Tensor<T>>> {
        let grads = self.backward(root);
        for (node, grad) in self.nodes.iter().zip(&grads) {
            if let (Some(id), Some(g)) = (node.param, grad) {
                store.accumulate_grad(id, g);
            }
        }
        grads
    }

    fn accumulate(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        use kernels as k;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv3d { x, w, b, spec } => {
                let dx = k::conv3d_backward_input(dy, self.value(*w), self.shape(*x), spec);
                let dw = k::conv3d_backward_weight(dy, self.value(*x), self.shape(*w), spec);
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                if let Some(b) = b {
                    Self::accumulate(grads, *b, k::conv3d_backward_bias(dy));
                }
            }
            Op::ConvTranspose3d { x, w, b, spec } => {
                let dx = k::conv_transpose3d_backward_input(dy, self.value(*w), self.shape(*x), spec);
                let dw = k::conv_transpose3d_backward_weight(dy, self.value(*x), self.shape(*w), spec);
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                if let Some(b) = b {
                    Self::accumulate(grads, *b, k::conv3d_backward_bias(dy));
                }
            }
            Op::MaxPool3d { x, argmax } | Op::AdaptiveMaxPool3d { x, argmax } => {
                let dx = k::max_pool_backward(dy, argmax, self.shape(*x));
                Self::accumulate(grads, *x, dx);
            }
            Op::AdaptiveAvgPool3d { x, out } => {
                let dx = k::adaptive_avg_pool3d_backward(dy, self.shape(*x), *out);
                Self::accumulate(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                train,
            } => {
                let (dx, dgamma, dbeta) =
                    k::batch_norm3d_backward(dy, self.value(*x), self.value(*gamma), mean, invstd, *train);
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *gamma, dgamma);
                Self::accumulate(grads, *beta, dbeta);
            }
            Op::Linear { x, w, b } => {
                let (dx, dw, db) = k::linear_backward(dy, self.value(*x), self.value(*w));
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                if let Some(b) = b {
                    Self::accumulate(grads, *b, db);
                }
            }
            Op::Activation { x, kind } => {
                let dx = k::activation_backward(dy, self.value(*x), *kind);
                Self::accumulate(grads, *x, dx);
            }
            Op::Binary { a, b, kind } => {
                let (da_full, db_full) = match kind {
                    BinaryKind::Add => (dy.clone(), dy.clone()),
                    BinaryKind::Sub => (dy.clone(), dy.map(|v| -v)),
                    BinaryKind::Mul => {
                        let bv = kernels::broadcast_binary(dy, self.value(*b), BinaryKind::Mul);
                        let av = kernels::broadcast_binary(dy, self.value(*a), BinaryKind::Mul);
                        (bv, av)
                    }
                };
                Self::accumulate(grads, *a, k::reduce_to_shape(&da_full, self.shape(*a)));
                Self::accumulate(grads, *b, k::reduce_to_shape(&db_full, self.shape(*b)));
            }
            Op::MulScalar { x, c } => {
                let cc = T::from_f64(*c);
                Self::accumulate(grads, *x, dy.map(|v| v * cc));
            }
            Op::AddScalar { x } => {
                Self::accumulate(grads, *x, dy.clone());
            }
            Op::Concat { xs, axis } => {
                let axis = *axis;
                let out_shape = self.value(Var(i)).shape().to_vec();
                let outer: usize = out_shape[..axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let total_axis = out_shape[axis];
                let src = dy.data();
                let mut offset = 0usize;
                for &v in xs {
                    let part = self.shape(v)[axis];
                    let mut data = Vec::with_capacity(outer * part * inner);
                    for o in 0..outer {
                        let start = (o * total_axis + offset) * inner;
                        data.extend_from_slice(&src[start..start + part * inner]);
                    }
                    offset += part;
                    Self::accumulate(grads, v, Tensor::new(self.shape(v).to_vec(), data));
                }
            }
            Op::Permute { x, order } => {
                let mut inverse = vec![0usize; order.len()];
                for (pos, &ax) in order.iter().enumerate() {
                    inverse[ax] = pos;
                }
                Self::accumulate(grads, *x, dy.permute(&inverse));
            }
            Op::Reshape { x } => {
                Self::accumulate(grads, *x, dy.reshape(self.shape(*x).to_vec()));
            }
            Op::SelectRows { x, idx } => {
                let xs = self.shape(*x);
                let cols = xs[1];
                let mut dx = Tensor::<T>::zeros(xs.to_vec());
                {
                    let dst = dx.data_mut();
                    for (kth, &r) in idx.iter().enumerate() {
                        let src = &dy.data()[kth * cols..(kth + 1) * cols];
                        for (d, &s) in dst[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Op::MeanAxis { x, axis } => {
                let xs = self.shape(*x).to_vec();
                let len = T::from_f64(xs[*axis] as f64);
                let scaled = dy.map(|v| v / len);
                let bcast = kernels::broadcast_binary(
                    &scaled,
                    &Tensor::<T>::zeros(xs.clone()),
                    BinaryKind::Add,
                );
                Self::accumulate(grads, *x, bcast);
            }
            Op::MaxAxis { x, argmax } => {
                let dx = k::max_pool_backward(dy, argmax, self.shape(*x));
                Self::accumulate(grads, *x, dx);
            }
            Op::MeanAll { x } => {
                let xs = self.shape(*x).to_vec();
                let n: usize = xs.iter().product();
                let g = dy.data()[0] / T::from_f64(n as f64);
                Self::accumulate(grads, *x, Tensor::full(xs, g));
            }
            Op::SumAll { x } => {
                let xs = self.shape(*x).to_vec();
                Self::accumulate(grads, *x, Tensor::full(xs, dy.data()[0]));
            }
            Op::Ln { x } => {
                let dx = dy.zip(self.value(*x), |g, v| g / v);
                Self::accumulate(grads, *x, dx);
            }
            Op::PowConst { x, p } => {
                let pc = T::from_f64(*p);
                let pm1 = T::from_f64(*p - 1.0);
                let dx = dy.zip(self.value(*x), |g, v| g * pc * v.powf(pm1));
                Self::accumulate(grads, *x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                let dx = dy.zip(self.value(*x), |g, v| {
                    if v >= l && v <= h {
                        g
                    } else {
                        T::zero()
                    }
                });
                Self::accumulate(grads, *x, dx);
            }
            Op::SmoothL1 { x } => {
                let one = T::one();
                let two = T::from_f64(2.0);
                let dx = dy.zip(self.value(*x), |g, v| {
                    if v.abs() > one {
                        g * v.signum()
                    } else {
                        g * two * v
                    }
                });
                Self::accumulate(grads, *x, dx);
            }
            Op::Dropout { x, scale, mask } => {
                let sc = T::from_f64(*scale);
                let mut data = Vec::with_capacity(dy.numel());
                for (&g, &m) in dy.data().iter().zip(mask) {
                    data.push(if m == 1 { g * sc } else { T::zero() });
                }
                Self::accumulate(grads, *x, Tensor::new(dy.shape().to_vec(), data));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_chain_gradient() {
        // f(x) = mean(3 * x + 1); df/dx = 3 / n
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::from_fn(vec![2, 3], |i| (i[0] + i[1]) as f64));
        let y = g.mul_scalar(x, 3.0);
        let y = g.add_scalar(y, 1.0);
        let loss = g.mean_all(y);
        let grads = g.backward(loss);
        let dx = grads[0].as_ref().unwrap();
        for &v in dx.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_input_accumulates() {
        // f(x) = sum(x * x); df/dx = 2x
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]));
        let y = g.mul(x, x);
        let loss = g.sum_all(y);
        let grads = g.backward(loss);
        let dx = grads[0].as_ref().unwrap();
        assert_eq!(dx.data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let x = g.input(Tensor::full(vec![4], 2.0));
        let y = g.dropout(x, 0.5);
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn stack_makes_new_axis() {
        let mut g = Graph::<f64>::new(Mode::Eval);
        let a = g.input(Tensor::full(vec![2, 2], 1.0));
        let b = g.input(Tensor::full(vec![2, 2], 2.0));
        let s = g.stack(&[a, b], 0);
        assert_eq!(g.shape(s), &[2, 2, 2]);
        assert_eq!(g.value(s).data()[..4], [1.0; 4]);
        assert_eq!(g.value(s).data()[4..], [2.0; 4]);
    }
}
