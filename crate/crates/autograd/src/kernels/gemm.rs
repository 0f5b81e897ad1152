use crate::parallel::{for_each_chunk, Exec};
use crate::real::Real;
use crate::tensor::Tensor;

/// Strides of a stored row-major `rows x cols` matrix, optionally read transposed.
fn strides(cols: usize, trans: bool) -> (isize, isize) {
    if trans {
        (1, cols as isize)
    } else {
        (cols as isize, 1)
    }
}

/// Single `op(A) * op(B)` product into `c` (row-major `m x n`).
#[allow(clippy::too_many_arguments)]
pub fn gemm_into<T: Real>(
    a: &[T],
    a_cols: usize,
    ta: bool,
    b: &[T],
    b_cols: usize,
    tb: bool,
    m: usize,
    k: usize,
    n: usize,
    beta: T,
    c: &mut [T],
) {
    assert!(c.len() >= m * n);
    assert!(a.len() >= m * k && b.len() >= k * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = strides(a_cols, ta);
    let (rsb, csb) = strides(b_cols, tb);
    // SAFETY: lengths checked above; `c` is a distinct &mut borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Batched `op(A) @ op(B)` over the last two axes.
///
/// `a` is `[batch.., ar, ac]`; `b` is either rank 2 (shared by every batch
/// item) or carries the same batch axes as `a`.
pub fn bmm<T: Real>(exec: Exec, a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Tensor<T> {
    assert!(a.rank() >= 2 && b.rank() >= 2, "bmm needs rank >= 2 operands");
    let (ar, ac) = (a.dim(a.rank() - 2), a.dim(a.rank() - 1));
    let (br, bc) = (b.dim(b.rank() - 2), b.dim(b.rank() - 1));
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    assert_eq!(
        k,
        kb,
        "matmul inner dims differ: {:?} x {:?} (ta={ta}, tb={tb})",
        a.shape(),
        b.shape()
    );
    let batch_shape = &a.shape()[..a.rank() - 2];
    let batch: usize = batch_shape.iter().product();
    let shared = b.rank() == 2;
    if !shared {
        assert_eq!(
            &b.shape()[..b.rank() - 2],
            batch_shape,
            "matmul batch dims differ"
        );
    }
    let mut out_shape = batch_shape.to_vec();
    out_shape.extend([m, n]);
    let mut out = vec![T::zero(); batch * m * n];
    let (da, db) = (a.data(), b.data());

    if shared && !ta {
        // rows of every batch item stack into one tall matrix
        gemm_into(da, ac, false, db, bc, tb, batch * m, k, n, T::zero(), &mut out);
    } else {
        let (sa, sb) = (ar * ac, if shared { 0 } else { br * bc });
        for_each_chunk(exec, &mut out, m * n, |i, c| {
            gemm_into(
                &da[i * sa..(i + 1) * sa],
                ac,
                ta,
                &db[i * sb..i * sb + br * bc],
                bc,
                tb,
                m,
                k,
                n,
                T::zero(),
                c,
            );
        });
    }
    Tensor::from_vec(out_shape, out)
}
