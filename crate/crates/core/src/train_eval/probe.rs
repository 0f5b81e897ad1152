//! Linear video-identity probe on pooled deepest thermal features.

use fryshort_autograd::{Exec, Graph, ParamStore, Real};
use rand::seq::SliceRandom;

use super::data::{collate, Sample};
use super::evaluate::EVAL_CHUNK;
use crate::error::Result;
use crate::model::FryNet;
use crate::nn::{Ctx, Mode};
use crate::seed::{self, Stream};
use crate::synthdata::{Dataset, Split};

const PROBE_STEPS: usize = 500;
const PROBE_LR: f64 = 0.5;
const PROBE_L2: f64 = 1e-4;
const TRAIN_FRACTION: f64 = 0.8;

/// `GAP(F4)` for every train-split frame, with the frame's video id.
pub fn train_features<T: Real>(model: &FryNet, store: &ParamStore<T>, ds: &Dataset) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let frames = ds.split_frames(Split::Train);
    let mut feats = Vec::with_capacity(frames.len());
    let mut ids = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(EVAL_CHUNK) {
        let samples: Vec<Sample> = chunk.iter().map(|f| Sample::plain(f)).collect();
        let batch = collate::<T>(ds, &samples);
        let g = Graph::with_exec(Exec::auto());
        let cx = Ctx::new(&g, store, Mode::Eval, 0);
        let out = model.forward(&cx, &batch.thermal, &batch.rgb, None)?;
        let pooled = out.pyramid.f4().gap().value();
        let d = pooled.dim(1);
        for (j, row) in pooled.to_f64_vec().chunks(d).enumerate() {
            feats.push(row.to_vec());
            ids.push(chunk[j].video_id);
        }
    }
    Ok((feats, ids))
}

/// Held-out accuracy (percent) of a softmax-regression classifier fit on a
/// random 80% of the rows. Features are standardized with training-part
/// statistics.
pub fn probe_accuracy(features: &[Vec<f64>], labels: &[usize], seed: u64) -> f64 {
    let n = features.len();
    assert!(n >= 2 && n == labels.len(), "probe needs at least two labelled rows");
    let d = features[0].len();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    let y: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Probe));
    let n_train = ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n - 1);
    let (tr, te) = order.split_at(n_train);

    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for &i in tr {
        for j in 0..d {
            mean[j] += features[i][j] / tr.len() as f64;
        }
    }
    for &i in tr {
        for j in 0..d {
            std[j] += (features[i][j] - mean[j]).powi(2) / tr.len() as f64;
        }
    }
    let std: Vec<f64> = std.iter().map(|v| v.sqrt().max(1e-6)).collect();
    let z = |i: usize| -> Vec<f64> { (0..d).map(|j| (features[i][j] - mean[j]) / std[j]).collect() };
    let xtr: Vec<Vec<f64>> = tr.iter().map(|&i| z(i)).collect();

    let mut w = vec![0.0; d * k];
    let mut b = vec![0.0; k];
    let logits = |x: &[f64], w: &[f64], b: &[f64]| -> Vec<f64> {
        (0..k).map(|c| b[c] + (0..d).map(|j| x[j] * w[j * k + c]).sum::<f64>()).collect()
    };
    for _ in 0..PROBE_STEPS {
        let mut gw = vec![0.0; d * k];
        let mut gb = vec![0.0; k];
        for (x, &i) in xtr.iter().zip(tr) {
            let l = logits(x, &w, &b);
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let g = e[c] / s - if c == y[i] { 1.0 } else { 0.0 };
                gb[c] += g;
                for j in 0..d {
                    gw[j * k + c] += g * x[j];
                }
            }
        }
        let inv = 1.0 / tr.len() as f64;
        for (wv, gv) in w.iter_mut().zip(&gw) {
            *wv -= PROBE_LR * (gv * inv + PROBE_L2 * *wv);
        }
        for (bv, gv) in b.iter_mut().zip(&gb) {
            *bv -= PROBE_LR * gv * inv;
        }
    }
    let correct = te
        .iter()
        .filter(|&&i| {
            let l = logits(&z(i), &w, &b);
            let best = (0..k).fold(0, |a, c| if l[c] > l[a] { c } else { a });
            best == y[i]
        })
        .count();
    100.0 * correct as f64 / te.len() as f64
}

pub fn probe_audit<T: Real>(model: &FryNet, store: &ParamStore<T>, ds: &Dataset, seed: u64) -> Result<f64> {
    let (feats, ids) = train_features(model, store, ds)?;
    Ok(probe_accuracy(&feats, &ids, seed))
}
