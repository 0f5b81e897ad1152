use crate::graph::Var;
use crate::real::Real;
use crate::tensor::Tensor;

impl<'g, T: Real> Var<'g, T> {
    /// Mean cross-entropy of logits `[N, K, ...]` (class axis 1) against
    /// integer `targets` laid out as `[N, ...]`.
    pub fn cross_entropy(self, targets: &[usize]) -> Var<'g, T> {
        let x = self.value();
        let s = x.shape().to_vec();
        assert!(s.len() >= 2, "cross_entropy needs [N, K, ...] logits");
        let (n, k) = (s[0], s[1]);
        let inner: usize = s[2..].iter().product();
        assert_eq!(targets.len(), n * inner, "target count");
        let src = x.data();
        let count = T::lit((n * inner) as f64);
        let mut probs = vec![T::zero(); src.len()];
        let mut loss = T::zero();
        for b in 0..n {
            for i in 0..inner {
                let at = |c: usize| (b * k + c) * inner + i;
                let m = (0..k).map(|c| src[at(c)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for c in 0..k {
                    let e = (src[at(c)] - m).exp();
                    probs[at(c)] = e;
                    z += e;
                }
                for c in 0..k {
                    probs[at(c)] /= z;
                }
                let t = targets[b * inner + i];
                assert!(t < k, "target {t} out of range for {k} classes");
                loss += m + z.ln() - src[at(t)];
            }
        }
        let targets = targets.to_vec();
        self.op1(Tensor::scalar(loss / count), move |g| {
            let scale = g.item() / count;
            let mut d = probs.clone();
            for b in 0..n {
                for i in 0..inner {
                    d[(b * k + targets[b * inner + i]) * inner + i] -= T::one();
                }
            }
            d.iter_mut().for_each(|v| *v *= scale);
            Some(Tensor::from_vec(s.clone(), d))
        })
    }

    /// Mean Huber loss against a fixed target.
    pub fn huber(self, target: &Tensor<T>, delta: T) -> Var<'g, T> {
        let x = self.value();
        assert_eq!(x.shape(), target.shape(), "huber shape mismatch");
        let half = T::lit(0.5);
        let count = T::lit(x.numel() as f64);
        let r: Vec<T> = x.data().iter().zip(target.data()).map(|(&a, &b)| a - b).collect();
        let loss: T = r
            .iter()
            .map(|&v| {
                if v.abs() <= delta {
                    half * v * v
                } else {
                    delta * (v.abs() - half * delta)
                }
            })
            .sum();
        let shape = x.shape().to_vec();
        self.op1(Tensor::scalar(loss / count), move |g| {
            let scale = g.item() / count;
            let d = r.iter().map(|&v| scale * v.max(-delta).min(delta)).collect();
            Some(Tensor::from_vec(shape.clone(), d))
        })
    }

    /// Mean absolute error against a fixed target.
    pub fn l1(self, target: &Tensor<T>) -> Var<'g, T> {
        let x = self.value();
        assert_eq!(x.shape(), target.shape(), "l1 shape mismatch");
        let count = T::lit(x.numel() as f64);
        let r: Vec<T> = x.data().iter().zip(target.data()).map(|(&a, &b)| a - b).collect();
        let loss: T = r.iter().map(|v| v.abs()).sum();
        let shape = x.shape().to_vec();
        self.op1(Tensor::scalar(loss / count), move |g| {
            let scale = g.item() / count;
            let d = r
                .iter()
                .map(|&v| if v == T::zero() { T::zero() } else { scale * v.signum() })
                .collect();
            Some(Tensor::from_vec(shape.clone(), d))
        })
    }

    /// Identity forward; backward multiplies the incoming gradient by `-alpha`.
    /// The forward value shares storage with the input.
    pub fn grl(self, alpha: T) -> Var<'g, T> {
        self.op1(self.value(), move |g| Some(g.map(|v| -alpha * v)))
    }

    /// Identity forward with no gradient path.
    pub fn detach(self) -> Var<'g, T> {
        self.g.constant(self.value())
    }
}
