//! The optimisation loop.

use fryshort_autograd::{Exec, Graph, ParamStore};
use serde::{Deserialize, Serialize};

use super::data::{augment, collate, sample_keys, Sample};
use super::evaluate::evaluate;
use super::metrics::MetricsReport;
use super::optim::{lr_at, AdamW};
use crate::adversarial::DomainIndex;
use crate::config::RunConfig;
use crate::error::{FryError, Result};
use crate::heads_losses::{weighted_sum, LossTerm};
use crate::model::FryNet;
use crate::nn::{Ctx, Mode};
use crate::rgb_mae_encoder::{sample_mask, MaskPlan};
use crate::seed::{self, Stream};
use crate::synthdata::{Dataset, Split};

/// One row of the training curve. `terms` holds the unweighted losses of
/// every computed term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iter: usize,
    pub lr: f64,
    pub total: f64,
    pub terms: Vec<(LossTerm, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FryNet,
    /// Parameters after the last iteration.
    pub store: ParamStore<f32>,
    /// Parameters at the validation point with the highest mIoU.
    pub best_store: ParamStore<f32>,
    pub best_iter: usize,
    pub curve: Vec<CurvePoint>,
    pub val: Vec<(usize, MetricsReport)>,
    pub iter0_loss: f64,
}

/// Optional per-iteration observer, called after every optimizer step.
pub type Observer<'a> = &'a mut dyn FnMut(&CurvePoint);

/// Mask plans for one step, one per sample.
pub fn mask_plans(seed: u64, iter: usize, n: usize, n_tokens: usize, ratio: f64) -> Vec<MaskPlan> {
    let mut rng = seed::rng_at(seed, Stream::Mask, iter as u64);
    (0..n).map(|_| sample_mask(n_tokens, ratio, &mut rng)).collect()
}

/// Augmented training batch for `iter`.
pub fn training_samples(ds: &Dataset, cfg: &RunConfig, iter: usize) -> Vec<Sample> {
    let mut srng = seed::rng_at(cfg.seed, Stream::Sampler, iter as u64);
    let mut arng = seed::rng_at(cfg.seed, Stream::Augment, iter as u64);
    sample_keys(ds, cfg.train.batch_size, &mut srng)
        .into_iter()
        .map(|(v, f)| augment(ds.frame(v, f), &cfg.train.augment, &mut arng))
        .collect()
}

pub fn train(cfg: &RunConfig, ds: &Dataset, exec: Exec, mut observe: Option<Observer<'_>>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.manifest.image_size != cfg.videos.image_size {
        return Err(FryError::Config(format!(
            "dataset frames are {:?} but the model expects {:?}",
            ds.manifest.image_size, cfg.videos.image_size
        )));
    }
    let mut store = ParamStore::<f32>::new();
    let model = FryNet::new(&mut store, cfg, DomainIndex::from_manifest(&ds.manifest))?;
    let t = &cfg.train;
    let mut opt = AdamW::new(t.weight_decay);
    let eval_every = ((t.total_iters as f64 * t.eval_fraction).round() as usize).max(1);

    let mut curve = Vec::with_capacity(t.total_iters);
    let mut val = Vec::new();
    let mut best: Option<(f64, usize, ParamStore<f32>)> = None;
    for iter in 0..t.total_iters {
        let lr = lr_at(iter, t)?;
        let samples = training_samples(ds, cfg, iter);
        let batch = collate::<f32>(ds, &samples);
        let plans = match (model.uses_mae(), model.n_tokens()) {
            (true, Some(n)) => Some(mask_plans(cfg.seed, iter, batch.len(), n, cfg.model.encoder.mask_ratio)),
            _ => None,
        };
        let (point, grads, stats) = {
            let g = Graph::with_exec(exec);
            let cx = Ctx::new(&g, &store, Mode::Train, seed::mix(cfg.seed, iter as u64));
            let out = model.forward(&cx, &batch.thermal, &batch.rgb, plans.as_deref())?;
            let parts = model.loss_parts(&cx, &batch, &out, plans.as_deref())?;
            let objective = model.objective(&cx, &parts, &cfg.loss)?;
            let terms = parts.values();
            let total = weighted_sum(&terms, &cfg.loss);
            if !total.is_finite() {
                return Err(FryError::Validation(format!("non-finite loss at iteration {iter}")));
            }
            let grads = g.backward(objective);
            (CurvePoint { iter, lr, total, terms }, grads, cx.take_running_stats())
        };
        stats.apply(&mut store, t.bn_momentum);
        opt.step(&mut store, &grads, lr);
        if let Some(f) = observe.as_mut() {
            f(&point);
        }
        curve.push(point);

        if (iter + 1) % eval_every == 0 || iter + 1 == t.total_iters {
            let (report, _) = evaluate(&model, &store, ds, Split::Val, exec)?;
            if best.as_ref().map_or(true, |(m, _, _)| report.miou > *m) {
                best = Some((report.miou, iter + 1, store.clone()));
            }
            val.push((iter + 1, report));
        }
    }
    let (_, best_iter, best_store) = best.expect("at least one validation pass");
    let iter0_loss = curve[0].total;
    Ok(TrainOutcome {
        model,
        store,
        best_store,
        best_iter,
        curve,
        val,
        iter0_loss,
    })
}
