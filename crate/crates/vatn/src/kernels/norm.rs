//! Batch normalization over `(N, C, D, H, W)`, per channel.

use super::conv::dims5;
use crate::tensor::{Scalar, Tensor};

pub struct BatchNormOutput<T> {
    pub y: Tensor<T>,
    /// Mean used for normalization (batch mean in train mode, running mean in eval).
    pub mean: Tensor<T>,
    /// `1 / sqrt(var + eps)` used for normalization.
    pub invstd: Tensor<T>,
    /// Updated running statistics; present only in train mode.
    pub new_running: Option<(Tensor<T>, Tensor<T>)>,
}

/// Normalize per channel over the `(N, D, H, W)` axes.
///
/// Train mode normalizes with the batch statistics (biased variance) and
/// returns running stats updated as `(1 - momentum) * old + momentum * batch`.
/// Eval mode normalizes with the supplied running statistics.
/// Statistics accumulate in `f64` so the result does not depend on how work
/// is split across threads.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm3d<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    train: bool,
    eps: f64,
    momentum: f64,
) -> BatchNormOutput<T> {
    let [n, c, d, h, w] = dims5(x);
    assert_eq!(gamma.shape(), &[c], "gamma length must equal channels");
    assert_eq!(beta.shape(), &[c], "beta length must equal channels");
    assert_eq!(running_mean.shape(), &[c]);
    assert_eq!(running_var.shape(), &[c]);

    let spatial = d * h * w;
    let count = n * spatial;
    let src = x.data();

    let (mean, var): (Vec<T>, Vec<T>) = if train {
        let mut mean = vec![0f64; c];
        let mut var = vec![0f64; c];
        for (cc, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
            let mut sum = 0f64;
            let mut sumsq = 0f64;
            for nn in 0..n {
                let base = (nn * c + cc) * spatial;
                for &x in &src[base..base + spatial] {
                    let xf = x.as_f64();
                    sum += xf;
                    sumsq += xf * xf;
                }
            }
            *m = sum / count as f64;
            *v = (sumsq / count as f64 - *m * *m).max(0.0);
        }
        (
            mean.iter().map(|&m| T::from_f64(m)).collect(),
            var.iter().map(|&v| T::from_f64(v)).collect(),
        )
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };

    let invstd: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64(1.0 / (v.as_f64() + eps).sqrt()))
        .collect();

    let mut out = vec![T::zero(); src.len()];
    let gd = gamma.data();
    let bd = beta.data();
    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * spatial;
            let (m, is, g, b) = (mean[cc], invstd[cc], gd[cc], bd[cc]);
            for (o, &v) in out[base..base + spatial].iter_mut().zip(&src[base..base + spatial]) {
                *o = (v - m) * is * g + b;
            }
        }
    }

    let new_running = if train {
        let mo = T::from_f64(momentum);
        let keep = T::from_f64(1.0 - momentum);
        let nm: Vec<T> = running_mean
            .data()
            .iter()
            .zip(&mean)
            .map(|(&o, &b)| o * keep + b * mo)
            .collect();
        let nv: Vec<T> = running_var
            .data()
            .iter()
            .zip(&var)
            .map(|(&o, &b)| o * keep + b * mo)
            .collect();
        Some((Tensor::new(vec![c], nm), Tensor::new(vec![c], nv)))
    } else {
        None
    };

    BatchNormOutput {
        y: Tensor::new(vec![n, c, d, h, w], out),
        mean: Tensor::new(vec![c], mean),
        invstd: Tensor::new(vec![c], invstd),
        new_running,
    }
}

/// Exact gradients for input, gamma, and beta.
///
/// In train mode the normalization statistics depend on the input, so
/// `dx = (gamma * invstd) * (dy - mean(dy) - xhat * mean(dy * xhat))`.
/// In eval mode the statistics are constants and `dx = dy * gamma * invstd`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm3d_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &Tensor<T>,
    invstd: &Tensor<T>,
    train: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, c, d, h, w] = dims5(x);
    let spatial = d * h * w;
    let count = (n * spatial) as f64;
    let xd = x.data();
    let gd = dy.data();
    let gm = gamma.data();
    let md = mean.data();
    let isd = invstd.data();

    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut sum_dy = vec![0f64; c];
    let mut sum_dy_xhat = vec![0f64; c];

    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * spatial;
            let (m, is) = (md[cc], isd[cc]);
            let mut s_dy = 0f64;
            let mut s_dyx = 0f64;
            for (&g, &v) in gd[base..base + spatial].iter().zip(&xd[base..base + spatial]) {
                let xhat = ((v - m) * is).as_f64();
                s_dy += g.as_f64();
                s_dyx += g.as_f64() * xhat;
            }
            sum_dy[cc] += s_dy;
            sum_dy_xhat[cc] += s_dyx;
        }
    }
    for cc in 0..c {
        dgamma[cc] = T::from_f64(sum_dy_xhat[cc]);
        dbeta[cc] = T::from_f64(sum_dy[cc]);
    }

    let mut dx = vec![T::zero(); xd.len()];
    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * spatial;
            let (m, is, g) = (md[cc], isd[cc], gm[cc]);
            let scale = g * is;
            if train {
                let mean_dy = T::from_f64(sum_dy[cc] / count);
                let mean_dy_xhat = T::from_f64(sum_dy_xhat[cc] / count);
                for i in base..base + spatial {
                    let xhat = (xd[i] - m) * is;
                    dx[i] = scale * (gd[i] - mean_dy - xhat * mean_dy_xhat);
                }
            } else {
                for i in base..base + spatial {
                    dx[i] = gd[i] * scale;
                }
            }
        }
    }

    (
        Tensor::new(x.shape().to_vec(), dx),
        Tensor::new(vec![c], dgamma),
        Tensor::new(vec![c], dbeta),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_normalizes_per_channel() {
        let x = Tensor::<f64>::from_fn(vec![2, 3, 2, 2, 2], |i| {
            (i[0] * 31 + i[1] * 7 + i[2] * 3 + i[3] * 5 + i[4]) as f64 * 0.37
        });
        let gamma = Tensor::full(vec![3], 1.0);
        let beta = Tensor::zeros(vec![3]);
        let rm = Tensor::zeros(vec![3]);
        let rv = Tensor::full(vec![3], 1.0);
        let out = batch_norm3d(&x, &gamma, &beta, &rm, &rv, true, 1e-5, 0.1);
        for cc in 0..3 {
            let mut vals = Vec::new();
            for nn in 0..2 {
                for zd in 0..2 {
                    for y in 0..2 {
                        for xx in 0..2 {
                            vals.push(out.y.at(&[nn, cc, zd, y, xx]));
                        }
                    }
                }
            }
            let m: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let v: f64 = vals.iter().map(|&a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-10, "channel mean {m}");
            assert!((v - 1.0).abs() < 1e-4, "channel var {v}");
        }
    }

    #[test]
    fn eval_identity_with_unit_stats() {
        let x = Tensor::<f64>::from_fn(vec![1, 2, 2, 2, 2], |i| i[4] as f64 - 0.5);
        let gamma = Tensor::full(vec![2], 1.0);
        let beta = Tensor::zeros(vec![2]);
        let rm = Tensor::zeros(vec![2]);
        let rv = Tensor::full(vec![2], 1.0);
        let out = batch_norm3d(&x, &gamma, &beta, &rm, &rv, false, 1e-12, 0.1);
        for (a, b) in out.y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(out.new_running.is_none());
    }

    #[test]
    #[should_panic(expected = "gamma length")]
    fn channel_mismatch_panics() {
        let x = Tensor::<f64>::zeros(vec![1, 2, 2, 2, 2]);
        let gamma = Tensor::full(vec![3], 1.0);
        let beta = Tensor::zeros(vec![3]);
        let rm = Tensor::zeros(vec![3]);
        let rv = Tensor::full(vec![3], 1.0);
        let _ = batch_norm3d(&x, &gamma, &beta, &rm, &rv, true, 1e-5, 0.1);
    }
}
