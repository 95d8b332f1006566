//! Spatial pooling over `(N, C, D, H, W)` tensors.

use super::conv::{conv_out_size, dims5};
use crate::tensor::{Scalar, Tensor};

/// Windowed max pooling. Returns the pooled tensor and the flat input index
/// of each window's maximum (first occurrence in scan order on ties), which
/// the backward pass routes gradients through.
pub fn max_pool3d<T: Scalar>(
    x: &Tensor<T>,
    kernel: [usize; 3],
    stride: [usize; 3],
) -> (Tensor<T>, Vec<usize>) {
    let [n, c, d, h, w] = dims5(x);
    let [kd, kh, kw] = kernel;
    let [sd, sh, sw] = stride;
    assert!(
        d >= kd && h >= kh && w >= kw,
        "pool kernel {kernel:?} larger than input ({d}, {h}, {w})"
    );
    let (od, oh, ow) = (
        conv_out_size(d, kd, sd, 0),
        conv_out_size(h, kh, sh, 0),
        conv_out_size(w, kw, sw, 0),
    );
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * od * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for kz in 0..kd {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let idx = base
                                    + ((oz * sd + kz) * h + oy * sh + ky) * w
                                    + ox * sw
                                    + kx;
                                let v = src[idx];
                                if v > best {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    (Tensor::new(vec![n, c, od, oh, ow], out), argmax)
}

/// Backward for any argmax-routed pooling: scatter upstream gradients to the
/// recorded input positions.
pub fn max_pool_backward<T: Scalar>(dy: &Tensor<T>, argmax: &[usize], x_shape: &[usize]) -> Tensor<T> {
    let numel: usize = x_shape.iter().product();
    let mut dx = vec![T::zero(); numel];
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        dx[idx] += g;
    }
    Tensor::new(x_shape.to_vec(), dx)
}

/// Bin boundaries for adaptive pooling along one axis:
/// `start_i = floor(i * len / out)`, `end_i = ceil((i + 1) * len / out)`.
/// Bins cover the axis exactly and may overlap when `out` does not divide `len`.
pub fn adaptive_bins(len: usize, out: usize) -> Vec<(usize, usize)> {
    assert!(out >= 1 && out <= len, "adaptive output {out} exceeds input {len}");
    (0..out)
        .map(|i| (i * len / out, ((i + 1) * len).div_ceil(out)))
        .collect()
}

/// Adaptive average pooling to a fixed output extent per axis.
pub fn adaptive_avg_pool3d<T: Scalar>(x: &Tensor<T>, out_size: [usize; 3]) -> Tensor<T> {
    let [n, c, d, h, w] = dims5(x);
    let bins_d = adaptive_bins(d, out_size[0]);
    let bins_h = adaptive_bins(h, out_size[1]);
    let bins_w = adaptive_bins(w, out_size[2]);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * out_size.iter().product::<usize>());
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for &(zs, ze) in &bins_d {
            for &(ys, ye) in &bins_h {
                for &(xs, xe) in &bins_w {
                    let mut s = T::zero();
                    for zd in zs..ze {
                        for y in ys..ye {
                            let row = base + (zd * h + y) * w;
                            s += src[row + xs..row + xe].iter().copied().sum();
                        }
                    }
                    let count = (ze - zs) * (ye - ys) * (xe - xs);
                    out.push(s / T::from_f64(count as f64));
                }
            }
        }
    }
    Tensor::new(vec![n, c, out_size[0], out_size[1], out_size[2]], out)
}

pub fn adaptive_avg_pool3d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x_shape: &[usize],
    out_size: [usize; 3],
) -> Tensor<T> {
    let (n, c, d, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3], x_shape[4]);
    let bins_d = adaptive_bins(d, out_size[0]);
    let bins_h = adaptive_bins(h, out_size[1]);
    let bins_w = adaptive_bins(w, out_size[2]);
    let g = dy.data();
    let mut dx = vec![T::zero(); n * c * d * h * w];
    let mut gi = 0usize;
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for &(zs, ze) in &bins_d {
            for &(ys, ye) in &bins_h {
                for &(xs, xe) in &bins_w {
                    let count = (ze - zs) * (ye - ys) * (xe - xs);
                    let share = g[gi] / T::from_f64(count as f64);
                    gi += 1;
                    for zd in zs..ze {
                        for y in ys..ye {
                            let row = base + (zd * h + y) * w;
                            for v in &mut dx[row + xs..row + xe] {
                                *v += share;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), dx)
}

/// Adaptive max pooling with the same binning as [`adaptive_avg_pool3d`].
pub fn adaptive_max_pool3d<T: Scalar>(x: &Tensor<T>, out_size: [usize; 3]) -> (Tensor<T>, Vec<usize>) {
    let [n, c, d, h, w] = dims5(x);
    let bins_d = adaptive_bins(d, out_size[0]);
    let bins_h = adaptive_bins(h, out_size[1]);
    let bins_w = adaptive_bins(w, out_size[2]);
    let src = x.data();
    let mut out = Vec::new();
    let mut argmax = Vec::new();
    for nc in 0..n * c {
        let base = nc * d * h * w;
        for &(zs, ze) in &bins_d {
            for &(ys, ye) in &bins_h {
                for &(xs, xe) in &bins_w {
                    let mut best = T::neg_infinity();
                    let mut best_idx = 0usize;
                    for zd in zs..ze {
                        for y in ys..ye {
                            let row = base + (zd * h + y) * w;
                            for xx in xs..xe {
                                let v = src[row + xx];
                                if v > best {
                                    best = v;
                                    best_idx = row + xx;
                                }
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    (
        Tensor::new(vec![n, c, out_size[0], out_size[1], out_size[2]], out),
        argmax,
    )
}
