use crate::real::Real;
use crate::tensor::{contiguous_strides, numel, Tensor};

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` when read through an output of shape `out`;
/// broadcast (and left-padded) axes get stride 0.
pub fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let own = contiguous_strides(shape);
    let mut strides = vec![0; rank];
    for i in 0..shape.len() {
        let j = i + rank - shape.len();
        strides[j] = if shape[i] == 1 && out[j] != 1 { 0 } else { own[i] };
    }
    strides
}

/// Visits every element of a row-major `out` shape, passing the linear
/// output index and the matching offsets under strides `sa` and `sb`.
pub fn for_each_index(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let total = numel(out);
    if total == 0 {
        return;
    }
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = total / inner;
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..outer {
        let base = o * inner;
        for j in 0..inner {
            f(base + j, oa + j * ia, ob + j * ib);
        }
        // odometer over the outer axes
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub fn binary<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!("shapes {:?} and {:?} do not broadcast", a.shape(), b.shape())
    });
    let (da, db) = (a.data(), b.data());
    if b.numel() == 1 && out == a.shape() {
        let y = db[0];
        return Tensor::from_vec(out, da.iter().map(|&x| f(x, y)).collect());
    }
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut res = vec![T::zero(); numel(&out)];
    for_each_index(&out, &sa, &sb, |i, ia, ib| res[i] = f(da[ia], db[ib]));
    Tensor::from_vec(out, res)
}

/// Sums `g` down to `shape`, undoing a broadcast.
pub fn sum_to_shape<T: Real>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let st = broadcast_strides(shape, g.shape());
    let mut res = vec![T::zero(); numel(shape)];
    let dg = g.data();
    for_each_index(g.shape(), &st, &st, |i, ia, _| res[ia] += dg[i]);
    Tensor::from_vec(shape.to_vec(), res)
}

/// Materializes `t` at the broadcast shape `out`.
pub fn expand<T: Real>(t: &Tensor<T>, out: &[usize]) -> Tensor<T> {
    if t.shape() == out {
        return t.clone();
    }
    let st = broadcast_strides(t.shape(), out);
    let src = t.data();
    let mut res = vec![T::zero(); numel(out)];
    for_each_index(out, &st, &st, |i, ia, _| res[i] = src[ia]);
    Tensor::from_vec(out.to_vec(), res)
}
