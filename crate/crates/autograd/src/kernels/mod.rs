//! Graph-free tensor kernels. The autodiff ops in [`crate::ops`] are thin
//! wrappers over these; data pipelines call them directly.

pub mod broadcast;
pub mod conv;
pub mod gemm;
pub mod resize;

use crate::real::Real;
use crate::tensor::Tensor;

/// Copies `x` with its axes reordered so that output axis `i` is input axis `perm[i]`.
pub fn permute<T: Real>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let rank = x.rank();
    assert_eq!(perm.len(), rank, "permutation rank mismatch");
    let mut seen = vec![false; rank];
    for &p in perm {
        assert!(p < rank && !seen[p], "invalid permutation {perm:?}");
        seen[p] = true;
    }
    let in_strides = crate::tensor::contiguous_strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.dim(p)).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let src = x.data();
    let mut out = vec![T::zero(); x.numel()];
    broadcast::for_each_index(&out_shape, &src_strides, &src_strides, |i, s, _| {
        out[i] = src[s]
    });
    Tensor::from_vec(out_shape, out)
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `(outer, len, inner)` split of a shape around `axis`.
pub fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub fn concat<T: Real>(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!parts.is_empty());
    let first = parts[0].shape();
    for p in parts {
        assert_eq!(p.rank(), first.len(), "concat rank mismatch");
        for (d, (&a, &b)) in p.shape().iter().zip(first).enumerate() {
            assert!(d == axis || a == b, "concat shape mismatch {:?} vs {first:?}", p.shape());
        }
    }
    let total: usize = parts.iter().map(|p| p.dim(axis)).sum();
    let (outer, _, inner) = axis_split(first, axis);
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.dim(axis) * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.to_vec();
    shape[axis] = total;
    Tensor::from_vec(shape, out)
}

pub fn narrow<T: Real>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    assert!(start + len <= n, "narrow {start}+{len} exceeds axis length {n}");
    let src = x.data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        out.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_vec(shape, out)
}

pub fn index_select<T: Real>(x: &Tensor<T>, axis: usize, index: &[usize]) -> Tensor<T> {
    let (outer, n, inner) = axis_split(x.shape(), axis);
    let src = x.data();
    let mut out = Vec::with_capacity(outer * index.len() * inner);
    for o in 0..outer {
        for &i in index {
            assert!(i < n, "index {i} out of range {n}");
            let base = (o * n + i) * inner;
            out.extend_from_slice(&src[base..base + inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = index.len();
    Tensor::from_vec(shape, out)
}

/// Adjoint of [`index_select`]: accumulates rows of `g` at `index` positions.
pub fn index_add<T: Real>(g: &Tensor<T>, axis: usize, index: &[usize], n: usize) -> Tensor<T> {
    let (outer, k, inner) = axis_split(g.shape(), axis);
    assert_eq!(k, index.len());
    let src = g.data();
    let mut out = vec![T::zero(); outer * n * inner];
    for o in 0..outer {
        for (j, &i) in index.iter().enumerate() {
            let s = (o * k + j) * inner;
            let d = (o * n + i) * inner;
            for t in 0..inner {
                out[d + t] += src[s + t];
            }
        }
    }
    let mut shape = g.shape().to_vec();
    shape[axis] = n;
    Tensor::from_vec(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_roundtrip() {
        let x = Tensor::<f64>::from_vec([2, 3, 4], (0..24).map(|v| v as f64).collect());
        let p = permute(&x, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let back = permute(&p, &inverse_permutation(&[2, 0, 1]));
        assert_eq!(back, x);
    }

    #[test]
    fn concat_narrow_select() {
        let a = Tensor::<f64>::from_vec([2, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::<f64>::from_vec([2, 1], vec![5., 6.]);
        let c = concat(&[&a, &b], 1);
        assert_eq!(c.to_f64_vec(), vec![1., 2., 5., 3., 4., 6.]);
        assert_eq!(narrow(&c, 1, 1, 2).to_f64_vec(), vec![2., 5., 4., 6.]);
        assert_eq!(index_select(&c, 1, &[2, 0]).to_f64_vec(), vec![5., 1., 6., 3.]);
    }
}
