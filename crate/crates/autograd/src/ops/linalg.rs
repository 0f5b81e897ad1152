use crate::graph::Var;
use crate::kernels::gemm::bmm;
use crate::real::Real;
use crate::tensor::Tensor;

/// Collapses all leading axes so a batched operand can meet a shared matrix.
fn rows<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let cols = t.dim(t.rank() - 1);
    t.reshape([t.numel() / cols, cols])
}

impl<'g, T: Real> Var<'g, T> {
    /// `self @ other` over the last two axes. `other` is either rank 2
    /// (shared across the batch) or carries the same batch axes.
    pub fn matmul(self, other: Var<'g, T>) -> Var<'g, T> {
        self.mm(other, false)
    }

    /// `self @ other^T` over the last two axes.
    pub fn matmul_nt(self, other: Var<'g, T>) -> Var<'g, T> {
        self.mm(other, true)
    }

    fn mm(self, other: Var<'g, T>, tb: bool) -> Var<'g, T> {
        let exec = self.exec();
        let (a, b) = (self.value(), other.value());
        let out = bmm(exec, &a, false, &b, tb);
        let shared = b.rank() == 2 && a.rank() > 2;
        self.g.push_op(
            out,
            &[self, other],
            Box::new(move |g| {
                // C = A op(B):  dA = G op(B)^T
                let ga = bmm(exec, g, false, &b, !tb);
                let gb = if shared {
                    let (af, gf) = (rows(&a), rows(g));
                    if tb {
                        bmm(exec, &gf, true, &af, false)
                    } else {
                        bmm(exec, &af, true, &gf, false)
                    }
                } else if tb {
                    bmm(exec, g, true, &a, false)
                } else {
                    bmm(exec, &a, true, g, false)
                };
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    /// Dense layer over the last axis: `self @ w + b` with `w: [in, out]`.
    pub fn linear(self, w: Var<'g, T>, b: Option<Var<'g, T>>) -> Var<'g, T> {
        let y = self.matmul(w);
        match b {
            Some(b) => y.add(b),
            None => y,
        }
    }
}
