//! Affine map on `(N, F_in)` batches: `y = x W^T + b` with `W: (F_out, F_in)`.

use crate::tensor::{Scalar, Tensor};
use rayon::prelude::*;

pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, f_in) = dims2(x);
    let (f_out, w_in) = dims2(w);
    assert_eq!(f_in, w_in, "linear: input features {f_in} vs weight {w_in}");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[f_out]);
    }
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::zero(); n * f_out];
    out.par_chunks_mut(f_out).enumerate().for_each(|(row, o)| {
        let xrow = &xd[row * f_in..(row + 1) * f_in];
        for (j, ov) in o.iter_mut().enumerate() {
            let wrow = &wd[j * f_in..(j + 1) * f_in];
            let mut s = T::zero();
            for (&xv, &wv) in xrow.iter().zip(wrow) {
                s += xv * wv;
            }
            *ov = s;
        }
        if let Some(b) = bias {
            for (ov, &bv) in o.iter_mut().zip(b.data()) {
                *ov += bv;
            }
        }
    });
    Tensor::new(vec![n, f_out], out)
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    w: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, f_out) = dims2(dy);
    let (_, f_in) = dims2(x);
    let xd = x.data();
    let wd = w.data();
    let gd = dy.data();

    let mut dx = vec![T::zero(); n * f_in];
    for row in 0..n {
        let grow = &gd[row * f_out..(row + 1) * f_out];
        let dxrow = &mut dx[row * f_in..(row + 1) * f_in];
        for (j, &g) in grow.iter().enumerate() {
            let wrow = &wd[j * f_in..(j + 1) * f_in];
            for (dv, &wv) in dxrow.iter_mut().zip(wrow) {
                *dv += g * wv;
            }
        }
    }

    let mut dw = vec![T::zero(); f_out * f_in];
    for row in 0..n {
        let grow = &gd[row * f_out..(row + 1) * f_out];
        let xrow = &xd[row * f_in..(row + 1) * f_in];
        for (j, &g) in grow.iter().enumerate() {
            let dwrow = &mut dw[j * f_in..(j + 1) * f_in];
            for (dv, &xv) in dwrow.iter_mut().zip(xrow) {
                *dv += g * xv;
            }
        }
    }

    let mut db = vec![T::zero(); f_out];
    for row in 0..n {
        for (j, dv) in db.iter_mut().enumerate() {
            *dv += gd[row * f_out + j];
        }
    }

    (
        Tensor::new(vec![n, f_in], dx),
        Tensor::new(vec![f_out, f_in], dw),
        Tensor::new(vec![f_out], db),
    )
}

fn dims2<T: Scalar>(t: &Tensor<T>) -> (usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 2, "expected a 2-D tensor, got {s:?}");
    (s[0], s[1])
}
