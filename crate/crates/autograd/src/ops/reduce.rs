use crate::graph::Var;
use crate::kernels::axis_split;
use crate::real::Real;
use crate::tensor::Tensor;

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl<'g, T: Real> Var<'g, T> {
    pub fn sum_all(self) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.op1(Tensor::scalar(x.sum()), move |g| Some(Tensor::full(shape.clone(), g.item())))
    }

    pub fn mean_all(self) -> Var<'g, T> {
        let n = self.value().numel();
        self.sum_all().scale(T::one() / T::lit(n as f64))
    }

    pub fn sum_axis(self, axis: usize, keepdim: bool) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = x.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let row = &src[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += v;
                }
            }
        }
        let out = Tensor::from_vec(reduced_shape(&shape, axis, keepdim), out);
        self.op1(out, move |g| {
            let gd = g.data();
            let mut d = Vec::with_capacity(outer * n * inner);
            for o in 0..outer {
                for _ in 0..n {
                    d.extend_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            Some(Tensor::from_vec(shape.clone(), d))
        })
    }

    pub fn mean_axis(self, axis: usize, keepdim: bool) -> Var<'g, T> {
        let n = self.dim(axis);
        self.sum_axis(axis, keepdim).scale(T::one() / T::lit(n as f64))
    }

    /// Maximum along `axis`; the gradient goes to the first maximal element.
    pub fn max_axis(self, axis: usize, keepdim: bool) -> Var<'g, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = x.data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                for i in 0..inner {
                    let v = src[(o * n + k) * inner + i];
                    if v > out[o * inner + i] {
                        out[o * inner + i] = v;
                        arg[o * inner + i] = k;
                    }
                }
            }
        }
        let out = Tensor::from_vec(reduced_shape(&shape, axis, keepdim), out);
        self.op1(out, move |g| {
            let gd = g.data();
            let mut d = vec![T::zero(); outer * n * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let j = o * inner + i;
                    d[(o * n + arg[j]) * inner + i] = gd[j];
                }
            }
            Some(Tensor::from_vec(shape.clone(), d))
        })
    }

    /// Global average pool: `[N, C, H, W] -> [N, C]`.
    pub fn gap(self) -> Var<'g, T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "gap expects NCHW, got {s:?}");
        self.reshape([s[0], s[1], s[2] * s[3]]).mean_axis(2, false)
    }

    /// Global max pool: `[N, C, H, W] -> [N, C]`.
    pub fn gmp(self) -> Var<'g, T> {
        let s = self.shape();
        assert_eq!(s.len(), 4, "gmp expects NCHW, got {s:?}");
        self.reshape([s[0], s[1], s[2] * s[3]]).max_axis(2, false)
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'g, T> {
        let x = self.value();
        let n = x.dim(x.rank() - 1);
        let mut y = x.data().to_vec();
        for row in y.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let y = Tensor::from_vec(x.shape().to_vec(), y);
        let yc = y.clone();
        self.op1(y, move |g| {
            let mut d = vec![T::zero(); g.numel()];
            for ((dr, gr), yr) in d.chunks_mut(n).zip(g.data().chunks(n)).zip(yc.data().chunks(n)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for ((dv, &gv), &yv) in dr.iter_mut().zip(gr).zip(yr) {
                    *dv = yv * (gv - dot);
                }
            }
            Some(Tensor::from_vec(g.shape().to_vec(), d))
        })
    }
}
