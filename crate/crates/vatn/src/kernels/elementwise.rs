//! Broadcasting elementwise arithmetic.
//!
//! Two tensors of equal rank combine elementwise; an axis of size 1
//! broadcasts against any size. The backward reduction for a broadcast
//! input sums gradients over the broadcast axes.

use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

/// Shape of the broadcast result, panicking on incompatible axes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast requires equal rank: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&da, &db)| {
            assert!(
                da == db || da == 1 || db == 1,
                "incompatible shapes for broadcast: {a:?} vs {b:?}"
            );
            da.max(db)
        })
        .collect()
}

pub fn broadcast_binary<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, kind: BinaryKind) -> Tensor<T> {
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let op = move |x: T, y: T| match kind {
        BinaryKind::Add => x + y,
        BinaryKind::Sub => x - y,
        BinaryKind::Mul => x * y,
    };
    if a.shape() == b.shape() {
        return a.zip(b, op);
    }

    let rank = out_shape.len();
    let numel: usize = out_shape.iter().product();
    let a_strides = effective_strides(a.shape(), &out_shape);
    let b_strides = effective_strides(b.shape(), &out_shape);
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    let mut a_off = 0usize;
    let mut b_off = 0usize;
    for _ in 0..numel {
        out.push(op(ad[a_off], bd[b_off]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            a_off += a_strides[ax];
            b_off += b_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            idx[ax] = 0;
            a_off -= a_strides[ax] * out_shape[ax];
            b_off -= b_strides[ax] * out_shape[ax];
        }
    }
    Tensor::new(out_shape, out)
}

/// Strides into `shape` when iterated under `out_shape`; broadcast axes get
/// stride 0.
fn effective_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for ax in (0..shape.len()).rev() {
        strides[ax] = if shape[ax] == 1 && out_shape[ax] != 1 { 0 } else { acc };
        acc *= shape[ax];
    }
    strides
}

/// Sum `t` down to `target` shape (the inverse of broadcasting).
pub fn reduce_to_shape<T: Scalar>(t: &Tensor<T>, target: &[usize]) -> Tensor<T> {
    if t.shape() == target {
        return t.clone();
    }
    assert_eq!(t.shape().len(), target.len());
    let rank = target.len();
    let mut out = Tensor::<T>::zeros(target.to_vec());
    let t_shape = t.shape().to_vec();
    let target_strides = effective_strides(target, &t_shape);
    let od = out.data_mut();
    let td = t.data();
    let mut idx = vec![0usize; rank];
    let mut o_off = 0usize;
    for &v in td {
        od[o_off] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            o_off += target_strides[ax];
            if idx[ax] < t_shape[ax] {
                break;
            }
            idx[ax] = 0;
            o_off -= target_strides[ax] * t_shape[ax];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_gate_broadcast() {
        // (1, 2, 1, 1, 1) gate over a (1, 2, 2, 2, 2) map
        let gate = Tensor::<f64>::new(vec![1, 2, 1, 1, 1], vec![0.5, 2.0]);
        let f = Tensor::<f64>::full(vec![1, 2, 2, 2, 2], 3.0);
        let y = broadcast_binary(&gate, &f, BinaryKind::Mul);
        for c in 0..2 {
            for i in 0..8 {
                let v = y.data()[c * 8 + i];
                assert_eq!(v, if c == 0 { 1.5 } else { 6.0 });
            }
        }
    }

    #[test]
    fn ones_gate_is_identity_zero_gate_is_zero() {
        let f = Tensor::<f64>::from_fn(vec![1, 3, 2, 2, 2], |i| i[4] as f64 + 0.5);
        let ones = Tensor::<f64>::full(vec![1, 3, 1, 1, 1], 1.0);
        let zeros = Tensor::<f64>::zeros(vec![1, 3, 1, 1, 1]);
        assert_eq!(broadcast_binary(&ones, &f, BinaryKind::Mul), f);
        assert!(broadcast_binary(&zeros, &f, BinaryKind::Mul)
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn reduce_inverts_broadcast_shape() {
        let t = Tensor::<f64>::full(vec![2, 3, 4], 1.0);
        let r = reduce_to_shape(&t, &[2, 1, 1]);
        assert_eq!(r.shape(), &[2, 1, 1]);
        assert!(r.data().iter().all(|&v| v == 12.0));
    }

    #[test]
    #[should_panic(expected = "incompatible shapes")]
    fn incompatible_shapes_panic() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 4]);
        let _ = broadcast_binary(&a, &b, BinaryKind::Add);
    }
}
