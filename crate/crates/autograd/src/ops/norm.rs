use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

/// Batch statistics produced by a normalization in training mode.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    /// Population variance.
    pub var: Vec<T>,
}

/// Shape broadcasting a per-channel vector against `[N, C, ...]`.
fn channel_shape(rank: usize, c: usize) -> Vec<usize> {
    let mut s = vec![1; rank - 1];
    s[0] = c;
    s
}

impl<'g, T: Real> Var<'g, T> {
    /// Views the value as `[a, b, d]` and standardizes each `b` slice over
    /// the `a` and `d` axes (no affine).
    fn standardize(self, a: usize, b: usize, d: usize, eps: T) -> (Var<'g, T>, NormStats<T>) {
        let x = self.value();
        assert_eq!(a * b * d, x.numel());
        let src = x.data();
        let count = T::lit((a * d) as f64);
        let mut mean = vec![T::zero(); b];
        let mut var = vec![T::zero(); b];
        for ia in 0..a {
            for ib in 0..b {
                let row = &src[(ia * b + ib) * d..(ia * b + ib + 1) * d];
                mean[ib] += row.iter().copied().sum::<T>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for ia in 0..a {
            for ib in 0..b {
                let row = &src[(ia * b + ib) * d..(ia * b + ib + 1) * d];
                var[ib] += row.iter().map(|&v| (v - mean[ib]) * (v - mean[ib])).sum::<T>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut y = vec![T::zero(); x.numel()];
        for (i, (yv, &xv)) in y.iter_mut().zip(src).enumerate() {
            let ib = (i / d) % b;
            *yv = (xv - mean[ib]) * rstd[ib];
        }
        let y = Tensor::from_vec(x.shape().to_vec(), y);
        let yc = y.clone();
        let out = self.op1(y, move |g| {
            let gd = g.data();
            let xh = yc.data();
            let mut mg = vec![T::zero(); b];
            let mut mgx = vec![T::zero(); b];
            for (i, (&gv, &hv)) in gd.iter().zip(xh).enumerate() {
                let ib = (i / d) % b;
                mg[ib] += gv;
                mgx[ib] += gv * hv;
            }
            let mut dx = vec![T::zero(); gd.len()];
            for (i, dv) in dx.iter_mut().enumerate() {
                let ib = (i / d) % b;
                *dv = rstd[ib] * (gd[i] - mg[ib] / count - xh[i] * mgx[ib] / count);
            }
            Some(Tensor::from_vec(g.shape().to_vec(), dx))
        });
        (out, NormStats { mean, var })
    }

    /// Layer norm over the last axis with per-feature affine `gamma`, `beta`.
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: T) -> Var<'g, T> {
        let s = self.shape();
        let d = s[s.len() - 1];
        let (y, _) = self.standardize(1, s.iter().product::<usize>() / d, d, eps);
        y.mul(gamma).add(beta)
    }

    /// Group norm over `[N, C, ...]` with per-channel affine.
    pub fn group_norm(self, groups: usize, gamma: Var<'g, T>, beta: Var<'g, T>, eps: T) -> Var<'g, T> {
        let s = self.shape();
        let c = s[1];
        assert!(groups > 0 && c % groups == 0, "groups {groups} must divide channels {c}");
        let per_group = s.iter().product::<usize>() / (s[0] * groups);
        let (y, _) = self.standardize(1, s[0] * groups, per_group, eps);
        let cs = channel_shape(s.len(), c);
        y.mul(gamma.reshape(cs.clone())).add(beta.reshape(cs))
    }

    /// Batch norm over `[N, C, ...]` using the batch's own statistics.
    pub fn batch_norm_train(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        eps: T,
    ) -> (Var<'g, T>, NormStats<T>) {
        let s = self.shape();
        let c = s[1];
        let inner = s[2..].iter().product::<usize>();
        let (y, stats) = self.standardize(s[0], c, inner, eps);
        let cs = channel_shape(s.len(), c);
        (y.mul(gamma.reshape(cs.clone())).add(beta.reshape(cs)), stats)
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        mean: &Tensor<T>,
        var: &Tensor<T>,
        eps: T,
    ) -> Var<'g, T> {
        let s = self.shape();
        let cs = channel_shape(s.len(), s[1]);
        let shift = mean.map(|m| -m).reshape(cs.clone());
        let scale = var.map(|v| T::one() / (v + eps).sqrt()).reshape(cs.clone());
        self.add_const(&shift)
            .mul_const(&scale)
            .mul(gamma.reshape(cs.clone()))
            .add(beta.reshape(cs))
    }
}

#[cfg(test)]
mod tests {
    use crate::gradcheck::gradcheck;
    use crate::tensor::Tensor;

    fn t(shape: &[usize], seed: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f64 + seed) * 1.71).sin() + 0.1 * i as f64).collect())
    }

    #[test]
    fn norm_gradients() {
        let ins = [t(&[2, 4, 3, 2], 0.0), t(&[4], 1.0), t(&[4], 2.0), t(&[6], 3.0), t(&[6], 4.0)];
        let w = t(&[2, 4, 3, 2], 7.0);
        for op in 0..3 {
            let r = gradcheck(&ins, 1e-6, |g, v| {
                let y = match op {
                    0 => v[0].group_norm(2, v[1], v[2], 1e-5),
                    1 => v[0].batch_norm_train(v[1], v[2], 1e-5).0,
                    _ => v[0].reshape([8, 6]).layer_norm(v[3], v[4], 1e-5).reshape([2, 4, 3, 2]),
                };
                y.mul(g.constant(w.clone())).sum_all()
            });
            assert!(r.max_rel_err < 1e-5, "op {op}: {r:?}");
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let g = crate::Graph::<f64>::new();
        let x = g.constant(t(&[3, 8], 0.0));
        let one = g.constant(Tensor::ones([8]));
        let zero = g.constant(Tensor::zeros([8]));
        let y = x.layer_norm(one, zero, 0.0).value();
        for row in y.data().chunks(8) {
            let m: f64 = row.iter().sum::<f64>() / 8.0;
            let v: f64 = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
        }
    }
}
