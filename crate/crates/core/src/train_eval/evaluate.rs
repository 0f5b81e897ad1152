//! Augmentation-free evaluation over a split.

use fryshort_autograd::parallel::map_indexed;
use fryshort_autograd::{Exec, Graph, ParamStore, Real};
use serde::{Deserialize, Serialize};

use super::data::{collate, Sample};
use super::metrics::{Confusion, MetricsReport};
use crate::error::Result;
use crate::heads_losses::{argmax_labels, majority_vote};
use crate::model::FryNet;
use crate::nn::{Ctx, Mode};
use crate::synthdata::{Dataset, OilClass, Split, Target};

/// Frames per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePrediction {
    pub video_id: usize,
    pub frame_idx: usize,
    pub truth: OilClass,
    pub predicted: OilClass,
    /// Raw-unit predictions indexed like [`Target::ALL`].
    pub regression: [f64; 4],
}

struct ChunkResult {
    conf: Confusion,
    preds: Vec<FramePrediction>,
}

/// Metrics of `model` on every frame of `split`. Chunks of frames may run
/// on different threads; their confusion matrices are merged in order.
pub fn evaluate<T: Real>(
    model: &FryNet,
    store: &ParamStore<T>,
    ds: &Dataset,
    split: Split,
    exec: Exec,
) -> Result<(MetricsReport, Vec<FramePrediction>)> {
    let frames = ds.split_frames(split);
    let chunks: Vec<_> = frames.chunks(EVAL_CHUNK).collect();
    let results: Vec<Result<ChunkResult>> = map_indexed(exec, chunks.len(), |i| {
        let chunk = chunks[i];
        let samples: Vec<Sample> = chunk.iter().map(|f| Sample::plain(f)).collect();
        let batch = collate::<T>(ds, &samples);
        let g = Graph::with_exec(Exec::Sequential);
        let cx = Ctx::new(&g, store, Mode::Eval, 0);
        let out = model.forward(&cx, &batch.thermal, &batch.rgb, None)?;
        let labels = argmax_labels(&out.seg_logits.value());
        let reg = out.reg_z.value().to_f64_vec();
        let hw = batch.thermal.dim(2) * batch.thermal.dim(3);
        let mut conf = Confusion::default();
        let mut preds = Vec::with_capacity(chunk.len());
        for (j, f) in chunk.iter().enumerate() {
            let pred = &labels[j * hw..(j + 1) * hw];
            conf.add(&f.mask, pred);
            let stats = &ds.manifest.norm_stats;
            preds.push(FramePrediction {
                video_id: f.video_id,
                frame_idx: f.frame_idx,
                truth: ds.video(f.video_id).class(),
                predicted: majority_vote(pred),
                regression: std::array::from_fn(|k| stats.denormalize(Target::ALL[k], reg[j * 4 + k])),
            });
        }
        Ok(ChunkResult { conf, preds })
    });
    let mut conf = Confusion::default();
    let mut preds = Vec::with_capacity(frames.len());
    for r in results {
        let r = r?;
        conf = conf.merge(&r.conf);
        preds.extend(r.preds);
    }
    let correct = preds.iter().filter(|p| p.truth == p.predicted).count();
    let mut abs_err = [0.0; 4];
    for p in &preds {
        let truth = ds.video(p.video_id).chem.targets();
        for k in 0..4 {
            abs_err[k] += (p.regression[k] - truth[k]).abs();
        }
    }
    let report = MetricsReport::from_parts(split.name(), &conf, correct, preds.len(), abs_err);
    Ok((report, preds))
}
