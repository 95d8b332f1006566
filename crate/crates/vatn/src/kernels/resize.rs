//! Separable cubic resampling of a `(D, H, W)` volume.
//!
//! Catmull-Rom weights (`a = -0.5`) are applied along each axis in turn
//! with align-corners coordinate mapping; out-of-range taps clamp to the
//! edge sample. Cubic interpolation reproduces linear ramps exactly and an
//! identity resize returns the input bit for bit.

use crate::tensor::{Scalar, Tensor};

const A: f64 = -0.5;

fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Tap positions and weights for resampling an axis of length `len` to
/// `out` samples.
fn axis_taps(len: usize, out: usize) -> Vec<([usize; 4], [f64; 4])> {
    assert!(len >= 2, "cubic resize needs at least 2 samples per axis");
    (0..out)
        .map(|i| {
            let src = if out == 1 {
                (len - 1) as f64 / 2.0
            } else {
                i as f64 * (len - 1) as f64 / (out - 1) as f64
            };
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0usize; 4];
            let mut wgt = [0f64; 4];
            for (k, (ii, ww)) in idx.iter_mut().zip(wgt.iter_mut()).enumerate() {
                let tap = base as isize + k as isize - 1;
                *ii = tap.clamp(0, len as isize - 1) as usize;
                *ww = cubic_weight(frac + 1.0 - k as f64);
            }
            (idx, wgt)
        })
        .collect()
}

fn resize_last_axis<T: Scalar>(x: &Tensor<T>, out: usize) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let len = *shape.last().unwrap();
    if out == len {
        return x.clone();
    }
    let taps = axis_taps(len, out);
    let rows = x.numel() / len;
    let src = x.data();
    let mut data = Vec::with_capacity(rows * out);
    for r in 0..rows {
        let row = &src[r * len..(r + 1) * len];
        for (idx, wgt) in &taps {
            let mut acc = 0f64;
            for k in 0..4 {
                acc += wgt[k] * row[idx[k]].as_f64();
            }
            data.push(T::from_f64(acc));
        }
    }
    let mut new_shape = shape;
    *new_shape.last_mut().unwrap() = out;
    Tensor::new(new_shape, data)
}

/// Resize a `(D, H, W)` volume to `out` via separable cubic interpolation.
pub fn resize_cubic3d<T: Scalar>(x: &Tensor<T>, out: [usize; 3]) -> Tensor<T> {
    let s = x.shape();
    assert_eq!(s.len(), 3, "resize_cubic3d expects a (D, H, W) tensor");
    assert!(
        s.iter().all(|&d| d >= 2),
        "degenerate axis: every input axis must have at least 2 samples, got {s:?}"
    );
    // W, then H, then D, rotating the last axis into place each time
    let w_done = resize_last_axis(x, out[2]);
    let h_done = resize_last_axis(&w_done.permute(&[0, 2, 1]), out[1]).permute(&[0, 2, 1]);
    resize_last_axis(&h_done.permute(&[1, 2, 0]), out[0]).permute(&[2, 0, 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for &(len, out) in &[(4usize, 7usize), (5, 3), (20, 20), (2, 9)] {
            for (_, wgt) in axis_taps(len, out) {
                let s: f64 = wgt.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "weights sum {s}");
            }
        }
    }

    #[test]
    fn constant_volume_stays_constant() {
        let x = Tensor::<f64>::full(vec![4, 5, 6], 3.25);
        let y = resize_cubic3d(&x, [7, 3, 9]);
        assert_eq!(y.shape(), &[7, 3, 9]);
        for &v in y.data() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_resize_is_bit_identical() {
        let x = Tensor::<f64>::from_fn(vec![5, 4, 3], |i| (i[0] * 17 + i[1] * 5 + i[2]) as f64 * 0.31);
        let y = resize_cubic3d(&x, [5, 4, 3]);
        assert_eq!(x, y);
    }

    #[test]
    fn linear_ramp_reproduced_exactly() {
        // cubic interpolation reproduces linear functions wherever the
        // 4-tap support is interior; edge taps clamp and are checked only
        // at exact sample positions (where the weights collapse to 0,1,0,0)
        let x = Tensor::<f64>::from_fn(vec![2, 2, 9], |i| 1.0 + 2.0 * i[2] as f64);
        let y = resize_cubic3d(&x, [2, 2, 17]);
        for ox in 0..17 {
            let src = ox as f64 * 8.0 / 16.0;
            let base = src.floor() as isize;
            let interior = base - 1 >= 0 && base + 2 <= 8;
            let exact_sample = (src - src.floor()).abs() < 1e-12;
            if interior || exact_sample {
                let expect = 1.0 + 2.0 * src;
                let got = y.at(&[0, 0, ox]);
                assert!((got - expect).abs() < 1e-5, "at {ox}: {got} vs {expect}");
            }
        }
    }

    #[test]
    #[should_panic(expected = "degenerate axis")]
    fn degenerate_axis_panics() {
        let x = Tensor::<f64>::zeros(vec![1, 4, 4]);
        let _ = resize_cubic3d(&x, [2, 2, 2]);
    }
}
