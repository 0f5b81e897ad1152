use crate::graph::{Graph, Var};
use crate::kernels::{self, axis_split};
use crate::real::Real;
use crate::tensor::Tensor;

impl<'g, T: Real> Var<'g, T> {
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Var<'g, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        self.op1(x.reshape(shape), move |g| Some(g.reshape(old.clone())))
    }

    pub fn permute(self, perm: &[usize]) -> Var<'g, T> {
        let out = kernels::permute(&self.value(), perm);
        let inv = kernels::inverse_permutation(perm);
        self.op1(out, move |g| Some(kernels::permute(g, &inv)))
    }

    pub fn transpose(self, a: usize, b: usize) -> Var<'g, T> {
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, T> {
        let x = self.value();
        let out = kernels::narrow(&x, axis, start, len);
        let shape = x.shape().to_vec();
        self.op1(out, move |g| {
            let (outer, n, inner) = axis_split(&shape, axis);
            let mut d = vec![T::zero(); outer * n * inner];
            let gd = g.data();
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                let src = o * len * inner;
                d[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
            }
            Some(Tensor::from_vec(shape.clone(), d))
        })
    }

    pub fn index_select(self, axis: usize, index: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let out = kernels::index_select(&x, axis, index);
        let n = x.dim(axis);
        let index = index.to_vec();
        self.op1(out, move |g| Some(kernels::index_add(g, axis, &index, n)))
    }

    /// `[N, C, H, W] -> [N, H*W, C]`
    pub fn to_tokens(self) -> Var<'g, T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "to_tokens expects NCHW, got {s:?}");
        self.reshape([s[0], s[1], s[2] * s[3]]).transpose(1, 2)
    }

    /// `[N, H*W, C] -> [N, C, H, W]`
    pub fn from_tokens(self, h: usize, w: usize) -> Var<'g, T> {
        let s = self.shape();
        assert_eq!(s.len(), 3, "from_tokens expects [N, L, C], got {s:?}");
        assert_eq!(s[1], h * w, "token count {} != {h}x{w}", s[1]);
        self.transpose(1, 2).reshape([s[0], s[2], h, w])
    }
}

impl<T: Real> Graph<T> {
    pub fn concat<'g>(&'g self, parts: &[Var<'g, T>], axis: usize) -> Var<'g, T> {
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        let out = kernels::concat(&refs, axis);
        let lens: Vec<usize> = values.iter().map(|v| v.dim(axis)).collect();
        self.push_op(
            out,
            parts,
            Box::new(move |g| {
                let mut start = 0;
                lens.iter()
                    .map(|&len| {
                        let piece = kernels::narrow(g, axis, start, len);
                        start += len;
                        Some(piece)
                    })
                    .collect()
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::gradcheck::gradcheck;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], seed: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + seed) * 0.77).sin()).collect())
    }

    #[test]
    fn shape_op_gradients() {
        let ins = [t(&[2, 3, 4], 0.0), t(&[2, 2, 4], 5.0)];
        let w = t(&[2, 5, 4], 9.0);
        let r = gradcheck(&ins, 1e-6, |g, v| {
            let c = g.concat(&[v[0], v[1]], 1);
            let p = c.permute(&[2, 0, 1]).reshape([4, 10]).reshape([2, 2, 5, 2]);
            let p = p.reshape([4, 2, 5]).permute(&[1, 2, 0]);
            let s = p.narrow(1, 1, 3).index_select(1, &[0, 2, 2]);
            let k = g.constant(w.clone()).narrow(1, 0, 3);
            s.mul(k).sum_all()
        });
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn token_round_trip() {
        let g = crate::Graph::<f64>::new();
        let x = g.constant(t(&[2, 3, 2, 4], 0.0));
        let back = x.to_tokens().from_tokens(2, 4);
        assert_eq!(back.value(), x.value());
        assert_eq!(x.to_tokens().shape(), vec![2, 8, 3]);
    }
}
