//! AdamW with decoupled weight decay and the warmup + polynomial schedule.

use fryshort_autograd::{Gradients, ParamId, ParamStore, Real, Tensor};

use crate::config::TrainConfig;
use crate::error::{FryError, Result};

/// `base * (i + 1) / warmup` during warmup, then
/// `base * (1 - (i - warmup) / (total - warmup))^power`.
pub fn lr_at(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    let (total, warm) = (cfg.total_iters, cfg.warmup_iters);
    if iter >= total {
        return Err(FryError::Validation(format!("iteration {iter} outside 0..{total}")));
    }
    Ok(if iter < warm {
        cfg.base_lr * (iter + 1) as f64 / warm as f64
    } else {
        let frac = (iter - warm) as f64 / (total - warm) as f64;
        cfg.base_lr * (1.0 - frac).powf(cfg.power)
    })
}

/// Weight decay applies to matrices and kernels only; biases, norm
/// parameters, gates, embeddings and the mask token are exempt.
pub fn decays<T: Real>(store: &ParamStore<T>, id: ParamId) -> bool {
    let name = store.name(id);
    store.get(id).rank() >= 2 && !name.contains("embed") && !name.contains("mask_token")
}

#[derive(Debug, Clone)]
pub struct AdamW<T: Real> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter. Parameters without a
    /// gradient this step still decay and advance their moments with zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let n = store.len();
        self.m.resize(n, None);
        self.v.resize(n, None);
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for id in store.trainable_ids() {
            let decay = if decays(store, id) { self.weight_decay } else { 0.0 };
            let shape = store.get(id).shape().to_vec();
            let i = id.0;
            let m = self.m[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
            let v = self.v[i].get_or_insert_with(|| Tensor::zeros(shape.clone()));
            let g = grads.param(id);
            let (lb1, lb2) = (T::lit(b1), T::lit(b2));
            let md = m.data_mut();
            let vd = v.data_mut();
            match g {
                Some(g) => {
                    for ((mv, vv), &gv) in md.iter_mut().zip(vd.iter_mut()).zip(g.data()) {
                        *mv = lb1 * *mv + (T::one() - lb1) * gv;
                        *vv = lb2 * *vv + (T::one() - lb2) * gv * gv;
                    }
                }
                None => {
                    for (mv, vv) in md.iter_mut().zip(vd.iter_mut()) {
                        *mv *= lb1;
                        *vv *= lb2;
                    }
                }
            }
            let (lr_t, shrink) = (T::lit(lr), T::lit(1.0 - lr * decay));
            let (c1, c2, eps) = (T::lit(bc1), T::lit(bc2), T::lit(self.eps));
            let p = store.get_mut(id).data_mut();
            for ((pv, &mv), &vv) in p.iter_mut().zip(md.iter()).zip(vd.iter()) {
                *pv = *pv * shrink - lr_t * (mv / c1) / ((vv / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::paper();
        assert_eq!(lr_at(cfg.warmup_iters, &cfg).unwrap(), 6e-5);
        assert_eq!(lr_at(0, &cfg).unwrap(), 6e-5 / 1500.0);
        let last = lr_at(cfg.total_iters - 1, &cfg).unwrap();
        assert!((last - 6e-5 / (40_000.0 - 1500.0)).abs() < 1e-15);
        assert!(lr_at(cfg.total_iters, &cfg).is_err());
    }

    #[test]
    fn schedule_is_continuous_at_warmup_boundary() {
        let cfg = TrainConfig::default();
        let before = lr_at(cfg.warmup_iters - 1, &cfg).unwrap();
        let at = lr_at(cfg.warmup_iters, &cfg).unwrap();
        assert_eq!(before, cfg.base_lr);
        assert_eq!(at, cfg.base_lr);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        use fryshort_autograd::Graph;
        let mut store = ParamStore::<f64>::new();
        let id = store.trainable("w", Tensor::from_vec([2, 2], vec![1.0, -1.0, 2.0, 0.5]));
        let grads = {
            let g = Graph::new();
            let w = g.param(&store, id);
            g.backward(w.sum_all())
        };
        let mut opt = AdamW::new(0.0);
        opt.step(&mut store, &grads, 0.1);
        let after = store.get(id).data().to_vec();
        for (a, b) in after.iter().zip([1.0, -1.0, 2.0, 0.5]) {
            assert!((a - (b - 0.1)).abs() < 1e-6);
        }
    }
}
