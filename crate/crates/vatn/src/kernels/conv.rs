//! 3-D (and, by reshape, 2-D) cross-correlation and transposed convolution.
//!
//! Convolution here means cross-correlation (no kernel flip), the usual
//! deep-learning convention. Input layout `(N, C_in, D, H, W)`, weight
//! layout `(C_out, C_in/groups, kD, kH, kW)`; a transposed convolution
//! weight is `(C_in, C_out, kD, kH, kW)`.

use crate::tensor::{Scalar, Tensor};
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
}

impl Conv3dSpec {
    pub fn unit() -> Self {
        Self {
            stride: [1, 1, 1],
            padding: [0, 0, 0],
            groups: 1,
        }
    }

    pub fn with_padding(padding: [usize; 3]) -> Self {
        Self {
            stride: [1, 1, 1],
            padding,
            groups: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvTranspose3dSpec {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

pub(crate) fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let padded = input + 2 * pad;
    assert!(
        padded >= kernel,
        "kernel {kernel} larger than padded input {padded}: non-positive output size"
    );
    (padded - kernel) / stride + 1
}

/// Zero-pad the three spatial axes of an `(N, C, D, H, W)` tensor.
fn pad5<T: Scalar>(x: &Tensor<T>, pad: [usize; 3]) -> Tensor<T> {
    if pad == [0, 0, 0] {
        return x.clone();
    }
    let [n, c, d, h, w] = dims5(x);
    let (dp, hp, wp) = (d + 2 * pad[0], h + 2 * pad[1], w + 2 * pad[2]);
    let mut out = vec![T::zero(); n * c * dp * hp * wp];
    let src = x.data();
    for nc in 0..n * c {
        for zd in 0..d {
            for y in 0..h {
                let s = ((nc * d + zd) * h + y) * w;
                let o = ((nc * dp + zd + pad[0]) * hp + y + pad[1]) * wp + pad[2];
                out[o..o + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Tensor::new(vec![n, c, dp, hp, wp], out)
}

/// Inverse of [`pad5`]: strip the padded margin.
fn crop5<T: Scalar>(xp: &Tensor<T>, pad: [usize; 3]) -> Tensor<T> {
    if pad == [0, 0, 0] {
        return xp.clone();
    }
    let [n, c, dp, hp, wp] = dims5(xp);
    let (d, h, w) = (dp - 2 * pad[0], hp - 2 * pad[1], wp - 2 * pad[2]);
    let mut out = vec![T::zero(); n * c * d * h * w];
    let src = xp.data();
    for nc in 0..n * c {
        for zd in 0..d {
            for y in 0..h {
                let s = ((nc * dp + zd + pad[0]) * hp + y + pad[1]) * wp + pad[2];
                let o = ((nc * d + zd) * h + y) * w;
                out[o..o + w].copy_from_slice(&src[s..s + w]);
            }
        }
    }
    Tensor::new(vec![n, c, d, h, w], out)
}

pub(crate) fn dims5<T: Scalar>(x: &Tensor<T>) -> [usize; 5] {
    let s = x.shape();
    assert_eq!(s.len(), 5, "expected a 5-D tensor, got shape {s:?}");
    [s[0], s[1], s[2], s[3], s[4]]
}

fn check_conv_shapes<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, groups: usize) {
    let [_, c_in, _, _, _] = dims5(x);
    let [c_out, w_cin, _, _, _] = dims5(w);
    assert!(groups >= 1, "groups must be >= 1");
    assert!(
        c_in % groups == 0 && c_out % groups == 0,
        "groups {groups} must divide input channels {c_in} and output channels {c_out}"
    );
    assert_eq!(
        w_cin,
        c_in / groups,
        "weight expects {w_cin} channels per group, input supplies {}",
        c_in / groups
    );
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[c_out], "bias must have shape [{c_out}]");
    }
}

/// Grouped 3-D cross-correlation.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Tensor<T> {
    check_conv_shapes(x, w, bias, spec.groups);
    let [n, c_in, d, h, wd] = dims5(x);
    let [c_out, cin_g, kd, kh, kw] = dims5(w);
    let [sd, sh, sw] = spec.stride;
    let od = conv_out_size(d, kd, sd, spec.padding[0]);
    let oh = conv_out_size(h, kh, sh, spec.padding[1]);
    let ow = conv_out_size(wd, kw, sw, spec.padding[2]);
    let xp = pad5(x, spec.padding);
    let [_, _, dp, hp, wp] = dims5(&xp);
    let _ = (d, h, wd);

    let co_per_g = c_out / spec.groups;
    let xdata = xp.data();
    let wdata = w.data();
    let slab = od * oh * ow;
    let mut out = vec![T::zero(); n * c_out * slab];

    out.par_chunks_mut(slab).enumerate().for_each(|(idx, o)| {
        let nn = idx / c_out;
        let co = idx % c_out;
        let g = co / co_per_g;
        if let Some(b) = bias {
            let bv = b.data()[co];
            o.iter_mut().for_each(|v| *v = bv);
        }
        for ci_l in 0..cin_g {
            let ci = g * cin_g + ci_l;
            let xbase = (nn * c_in + ci) * dp * hp * wp;
            for kz in 0..kd {
                for ky in 0..kh {
                    let wrow = &wdata[(((co * cin_g + ci_l) * kd + kz) * kh + ky) * kw..][..kw];
                    for oz in 0..od {
                        let iz = oz * sd + kz;
                        for oy in 0..oh {
                            let iy = oy * sh + ky;
                            let xrow = &xdata[xbase + (iz * hp + iy) * wp..][..wp];
                            let orow = &mut o[(oz * oh + oy) * ow..][..ow];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                if sw == 1 {
                                    let xs = &xrow[kx..kx + ow];
                                    for (ov, &xv) in orow.iter_mut().zip(xs) {
                                        *ov += xv * wv;
                                    }
                                } else {
                                    for (ox, ov) in orow.iter_mut().enumerate() {
                                        *ov += xrow[ox * sw + kx] * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(vec![n, c_out, od, oh, ow], out)
}

/// Gradient of [`conv3d`] with respect to its input.
pub fn conv3d_backward_input<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    spec: &Conv3dSpec,
) -> Tensor<T> {
    let [n, c_out, od, oh, ow] = dims5(dy);
    let [w_cout, cin_g, kd, kh, kw] = dims5(w);
    assert_eq!(c_out, w_cout);
    let c_in = x_shape[1];
    let [sd, sh, sw] = spec.stride;
    let (dp, hp, wp) = (
        x_shape[2] + 2 * spec.padding[0],
        x_shape[3] + 2 * spec.padding[1],
        x_shape[4] + 2 * spec.padding[2],
    );
    let co_per_g = c_out / spec.groups;
    let dydata = dy.data();
    let wdata = w.data();
    let slab = dp * hp * wp;
    let mut dxp = vec![T::zero(); n * c_in * slab];

    dxp.par_chunks_mut(slab).enumerate().for_each(|(idx, dx)| {
        let nn = idx / c_in;
        let ci = idx % c_in;
        let g = ci / cin_g;
        let ci_l = ci % cin_g;
        for co_l in 0..co_per_g {
            let co = g * co_per_g + co_l;
            let dybase = (nn * c_out + co) * od * oh * ow;
            for kz in 0..kd {
                for ky in 0..kh {
                    let wrow = &wdata[(((co * cin_g + ci_l) * kd + kz) * kh + ky) * kw..][..kw];
                    for oz in 0..od {
                        let iz = oz * sd + kz;
                        for oy in 0..oh {
                            let iy = oy * sh + ky;
                            let dyrow = &dydata[dybase + (oz * oh + oy) * ow..][..ow];
                            let dxrow = &mut dx[(iz * hp + iy) * wp..][..wp];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                if sw == 1 {
                                    let ds = &mut dxrow[kx..kx + ow];
                                    for (dv, &gy) in ds.iter_mut().zip(dyrow) {
                                        *dv += gy * wv;
                                    }
                                } else {
                                    for (ox, &gy) in dyrow.iter().enumerate() {
                                        dxrow[ox * sw + kx] += gy * wv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    let dxp = Tensor::new(vec![n, c_in, dp, hp, wp], dxp);
    crop5(&dxp, spec.padding)
}

/// Gradient of [`conv3d`] with respect to its weight.
pub fn conv3d_backward_weight<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    spec: &Conv3dSpec,
) -> Tensor<T> {
    let [n, c_out, od, oh, ow] = dims5(dy);
    let [n_x, c_in, _, _, _] = dims5(x);
    assert_eq!(n, n_x);
    let (cin_g, kd, kh, kw) = (w_shape[1], w_shape[2], w_shape[3], w_shape[4]);
    let [sd, sh, sw] = spec.stride;
    let xp = pad5(x, spec.padding);
    let [_, _, dp, hp, wp] = dims5(&xp);
    let xdata = xp.data();
    let dydata = dy.data();
    let co_per_g = c_out / spec.groups;
    let slab = cin_g * kd * kh * kw;
    let mut dw = vec![T::zero(); c_out * slab];

    dw.par_chunks_mut(slab).enumerate().for_each(|(co, dwc)| {
        let g = co / co_per_g;
        for nn in 0..n {
            let dybase = (nn * c_out + co) * od * oh * ow;
            for ci_l in 0..cin_g {
                let ci = g * cin_g + ci_l;
                let xbase = (nn * c_in + ci) * dp * hp * wp;
                for kz in 0..kd {
                    for ky in 0..kh {
                        let acc = &mut dwc[((ci_l * kd + kz) * kh + ky) * kw..][..kw];
                        for oz in 0..od {
                            let iz = oz * sd + kz;
                            for oy in 0..oh {
                                let iy = oy * sh + ky;
                                let dyrow = &dydata[dybase + (oz * oh + oy) * ow..][..ow];
                                let xrow = &xdata[xbase + (iz * hp + iy) * wp..][..wp];
                                for (kx, a) in acc.iter_mut().enumerate() {
                                    let mut s = T::zero();
                                    if sw == 1 {
                                        for (&gy, &xv) in dyrow.iter().zip(&xrow[kx..kx + ow]) {
                                            s += gy * xv;
                                        }
                                    } else {
                                        for (ox, &gy) in dyrow.iter().enumerate() {
                                            s += gy * xrow[ox * sw + kx];
                                        }
                                    }
                                    *a += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(w_shape.to_vec(), dw)
}

/// Gradient of a convolution bias: sum over every axis except channels.
pub fn conv3d_backward_bias<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, d, h, w] = dims5(dy);
    let mut db = vec![T::zero(); c];
    let data = dy.data();
    for nn in 0..n {
        for (cc, acc) in db.iter_mut().enumerate() {
            let base = (nn * c + cc) * d * h * w;
            *acc += data[base..base + d * h * w].iter().copied().sum();
        }
    }
    Tensor::new(vec![c], db)
}

/// Transposed 3-D convolution (the adjoint of [`conv3d`] in its spatial map).
/// Output spatial size per axis is `(in - 1) * stride - 2 * pad + kernel`.
pub fn conv_transpose3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvTranspose3dSpec,
) -> Tensor<T> {
    let [n, c_in, d, h, wd] = dims5(x);
    let [w_cin, c_out, kd, kh, kw] = dims5(w);
    assert_eq!(c_in, w_cin, "weight expects {w_cin} input channels, got {c_in}");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[c_out]);
    }
    let [sd, sh, sw] = spec.stride;
    let full = |i: usize, k: usize, s: usize| (i - 1) * s + k;
    let (fd, fh, fw) = (full(d, kd, sd), full(h, kh, sh), full(wd, kw, sw));
    let [pd, ph, pw] = spec.padding;
    assert!(
        fd > 2 * pd && fh > 2 * ph && fw > 2 * pw,
        "padding too large for transposed convolution output"
    );

    let xdata = x.data();
    let wdata = w.data();
    let slab = fd * fh * fw;
    let mut out = vec![T::zero(); n * c_out * slab];

    out.par_chunks_mut(slab).enumerate().for_each(|(idx, o)| {
        let nn = idx / c_out;
        let co = idx % c_out;
        for ci in 0..c_in {
            let xbase = (nn * c_in + ci) * d * h * wd;
            for kz in 0..kd {
                for ky in 0..kh {
                    let wrow = &wdata[(((ci * c_out + co) * kd + kz) * kh + ky) * kw..][..kw];
                    for iz in 0..d {
                        let oz = iz * sd + kz;
                        for iy in 0..h {
                            let oy = iy * sh + ky;
                            let xrow = &xdata[xbase + (iz * h + iy) * wd..][..wd];
                            let orow = &mut o[(oz * fh + oy) * fw..][..fw];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                for (ix, &xv) in xrow.iter().enumerate() {
                                    orow[ix * sw + kx] += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    let full_t = Tensor::new(vec![n, c_out, fd, fh, fw], out);
    let mut cropped = crop5(&full_t, spec.padding);
    if let Some(b) = bias {
        let [_, _, cd, ch, cw] = dims5(&cropped);
        let data = cropped.data_mut();
        let bd = b.data();
        for nc in 0..n * c_out {
            let bv = bd[nc % c_out];
            for v in &mut data[nc * cd * ch * cw..(nc + 1) * cd * ch * cw] {
                *v += bv;
            }
        }
    }
    cropped
}

/// Gradient of [`conv_transpose3d`] with respect to its input: a plain
/// convolution of the (re-padded) upstream gradient with the same weights.
pub fn conv_transpose3d_backward_input<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    x_shape: &[usize],
    spec: &ConvTranspose3dSpec,
) -> Tensor<T> {
    let dyp = pad5(dy, spec.padding);
    let [n, c_out, fd, fh, fw] = dims5(&dyp);
    let [c_in, w_cout, kd, kh, kw] = dims5(w);
    assert_eq!(c_out, w_cout);
    let [sd, sh, sw] = spec.stride;
    let (d, h, wd) = (x_shape[2], x_shape[3], x_shape[4]);
    let dydata = dyp.data();
    let wdata = w.data();
    let slab = d * h * wd;
    let mut dx = vec![T::zero(); n * c_in * slab];

    dx.par_chunks_mut(slab).enumerate().for_each(|(idx, o)| {
        let nn = idx / c_in;
        let ci = idx % c_in;
        for co in 0..c_out {
            let dybase = (nn * c_out + co) * fd * fh * fw;
            for kz in 0..kd {
                for ky in 0..kh {
                    let wrow = &wdata[(((ci * c_out + co) * kd + kz) * kh + ky) * kw..][..kw];
                    for iz in 0..d {
                        let oz = iz * sd + kz;
                        for iy in 0..h {
                            let oy = iy * sh + ky;
                            let dyrow = &dydata[dybase + (oz * fh + oy) * fw..][..fw];
                            let orow = &mut o[(iz * h + iy) * wd..][..wd];
                            for (kx, &wv) in wrow.iter().enumerate() {
                                for (ix, ov) in orow.iter_mut().enumerate() {
                                    *ov += dyrow[ix * sw + kx] * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(x_shape.to_vec(), dx)
}

/// Gradient of [`conv_transpose3d`] with respect to its weight.
pub fn conv_transpose3d_backward_weight<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: &[usize],
    spec: &ConvTranspose3dSpec,
) -> Tensor<T> {
    let dyp = pad5(dy, spec.padding);
    let [n, c_out, fd, fh, fw] = dims5(&dyp);
    let [_, c_in, d, h, wd] = dims5(x);
    let (kd, kh, kw) = (w_shape[2], w_shape[3], w_shape[4]);
    let [sd, sh, sw] = spec.stride;
    let dydata = dyp.data();
    let xdata = x.data();
    let slab = c_out * kd * kh * kw;
    let mut dw = vec![T::zero(); c_in * slab];

    dw.par_chunks_mut(slab).enumerate().for_each(|(ci, dwc)| {
        for nn in 0..n {
            let xbase = (nn * c_in + ci) * d * h * wd;
            for co in 0..c_out {
                let dybase = (nn * c_out + co) * fd * fh * fw;
                for kz in 0..kd {
                    for ky in 0..kh {
                        let acc = &mut dwc[((co * kd + kz) * kh + ky) * kw..][..kw];
                        for iz in 0..d {
                            let oz = iz * sd + kz;
                            for iy in 0..h {
                                let oy = iy * sh + ky;
                                let xrow = &xdata[xbase + (iz * h + iy) * wd..][..wd];
                                let dyrow = &dydata[dybase + (oz * fh + oy) * fw..][..fw];
                                for (kx, a) in acc.iter_mut().enumerate() {
                                    let mut s = T::zero();
                                    for (ix, &xv) in xrow.iter().enumerate() {
                                        s += xv * dyrow[ix * sw + kx];
                                    }
                                    *a += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    });

    Tensor::new(w_shape.to_vec(), dw)
}

/// 2-D cross-correlation on `(N, C, H, W)`, realized on the 3-D kernel with
/// a unit depth axis.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: [usize; 2],
    padding: [usize; 2],
) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "conv2d expects (N, C, H, W), got {s:?}");
    let ws = w.shape();
    assert_eq!(ws.len(), 4, "conv2d weight expects (C_out, C_in, kH, kW)");
    let x5 = x.reshape(vec![s[0], s[1], 1, s[2], s[3]]);
    let w5 = w.reshape(vec![ws[0], ws[1], 1, ws[2], ws[3]]);
    let spec = Conv3dSpec {
        stride: [1, stride[0], stride[1]],
        padding: [0, padding[0], padding[1]],
        groups: 1,
    };
    let y = conv3d(&x5, &w5, bias, &spec);
    let ys = y.shape().to_vec();
    y.reshape(vec![ys[0], ys[1], ys[3], ys[4]])
}
