//! Checks shared by the focused test targets and the acceptance gate.
#![allow(dead_code)]

use fryshort_autograd::gradcheck::{gradcheck_params, GradcheckReport};
use fryshort_autograd::{Graph, ParamId, ParamStore, Tensor, Var};
use fryshort_core::adversarial::{DannConfig, DannHead};
use fryshort_core::fusion::{FilmFuse, FusionConfig};
use fryshort_core::heads_losses::NUM_CLASSES;
use fryshort_core::nn::{Builder, Ctx, Mode};
use fryshort_core::rgb_mae_encoder::{patchify, EncoderConfig, MaskPlan, RgbMaeEncoder};
use fryshort_core::train_eval::Confusion;

pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_EPS: f64 = 1e-6;

pub fn wave(shape: &[usize], k: f64, phase: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape.to_vec(), &(0..n).map(|i| (i as f64 * k + phase).sin()).collect::<Vec<_>>())
}

/// Mean IoU and mean F1 from per-class pixel set arithmetic, without a
/// confusion matrix.
pub fn naive_metrics(pairs: &[(Vec<u8>, Vec<u8>)]) -> (f64, f64) {
    let mut ious = Vec::new();
    let mut f1s = Vec::new();
    for c in 0..NUM_CLASSES as u8 {
        let (mut inter, mut union, mut gt_n, mut pred_n) = (0u64, 0u64, 0u64, 0u64);
        for (gt, pred) in pairs {
            for (g, p) in gt.iter().zip(pred) {
                let (in_g, in_p) = (*g == c, *p == c);
                inter += (in_g && in_p) as u64;
                union += (in_g || in_p) as u64;
                gt_n += in_g as u64;
                pred_n += in_p as u64;
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
            f1s.push(2.0 * inter as f64 / (gt_n + pred_n) as f64);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    (mean(&ious), mean(&f1s))
}

pub fn fast_metrics(pairs: &[(Vec<u8>, Vec<u8>)]) -> (f64, f64) {
    let mut c = Confusion::default();
    for (g, p) in pairs {
        c.add(g, p);
    }
    (c.miou(), c.mf1())
}

fn ids(store: &ParamStore<f64>, prefixes: &[&str]) -> Vec<ParamId> {
    prefixes.iter().flat_map(|p| store.ids_with_prefix(p)).collect()
}

fn small_encoder(store: &mut ParamStore<f64>) -> RgbMaeEncoder {
    let cfg = EncoderConfig {
        depth: 2,
        embed_dim: 16,
        heads: 2,
        ..EncoderConfig::default()
    };
    RgbMaeEncoder::new(&mut Builder::new(store, 21), &cfg, [16, 16]).unwrap()
}

/// Reconstruction loss; 16x16 frames with p = 8 give four tokens, three masked.
pub fn mae_gradcheck() -> GradcheckReport {
    let mut store = ParamStore::<f64>::new();
    let enc = small_encoder(&mut store);
    let thermal = wave(&[2, 1, 16, 16], 0.173, 0.2).map(|v| 0.5 + 0.4 * v);
    let rgb = wave(&[2, 3, 16, 16], 0.071, 1.0).map(|v| 0.5 + 0.4 * v);
    let patches = patchify(&thermal, 8).unwrap();
    let plans = vec![MaskPlan::from_masked(4, vec![0, 2, 3]), MaskPlan::from_masked(4, vec![1, 2, 3])];
    let checked = ids(
        &store,
        &["mae_decoder", "encoder.pos_embed", "encoder.modality_embed", "encoder.thermal_proj", "encoder.block1"],
    );
    gradcheck_params(&store, &checked, GRAD_EPS, |g, s| {
        let cx = Ctx::new(g, s, Mode::Train, 0);
        let e = enc
            .forward_train(&cx, cx.constant(patches.clone()), cx.constant(rgb.clone()), &plans)
            .unwrap();
        enc.mae_loss(&cx, e.rgb_tokens, &patches, &plans)
    })
}

pub fn chem_gradcheck() -> GradcheckReport {
    let mut store = ParamStore::<f64>::new();
    let enc = small_encoder(&mut store);
    let rgb = wave(&[2, 3, 16, 16], 0.11, 0.4).map(|v| 0.5 + 0.4 * v);
    let targets = Tensor::from_vec([2, 3], vec![0.3, -1.7, 0.9, 2.4, -0.2, -0.6]);
    let checked = ids(&store, &["chem_head", "encoder.norm", "encoder.rgb_proj.bias", "encoder.block0.norm1"]);
    gradcheck_params(&store, &checked, GRAD_EPS, |g, s| {
        let cx = Ctx::new(g, s, Mode::Train, 0);
        let e = enc.context_features(&cx, cx.constant(rgb.clone())).unwrap();
        enc.chem_align(&cx, e.rgb_tokens, &targets)
    })
}

/// One report per FiLM parameter group: blend weight, modulation head and
/// gate.
pub fn film_gradchecks() -> Vec<(&'static str, GradcheckReport)> {
    let mut store = ParamStore::<f64>::new();
    let cfg = FusionConfig {
        unified_channels: 16,
        group_norm_groups: 4,
        ..FusionConfig::default()
    };
    let film = FilmFuse::new(&mut Builder::new(&mut store, 3), &cfg, 8);
    // move off the identity point so every path carries gradient
    store.set(film.alpha, Tensor::from_vec([1], vec![0.4]));
    let gb2 = film.gb2.w;
    let shape = store.get(gb2).shape().to_vec();
    store.set(gb2, wave(&shape, 0.77, 0.1).map(|v| 0.3 * v));
    let gate_w = film.gate.w;
    let shape = store.get(gate_w).shape().to_vec();
    store.set(gate_w, wave(&shape, 1.3, 0.5).map(|v| 0.5 * v));

    let f_ms = wave(&[2, 16, 8, 8], 0.19, 0.0);
    let s_ctx = wave(&[2, 8, 4, 4], 0.41, 0.7);
    let weights = wave(&[2, 16, 8, 8], 0.029, 0.3);
    fn loss<'g>(
        film: &FilmFuse,
        inputs: [&Tensor<f64>; 3],
        g: &'g Graph<f64>,
        s: &'g ParamStore<f64>,
    ) -> Var<'g, f64> {
        let cx = Ctx::new(g, s, Mode::Train, 0);
        film.forward(&cx, cx.constant(inputs[0].clone()), cx.constant(inputs[1].clone()))
            .unwrap()
            .mul_const(inputs[2])
            .sum_all()
    }
    ["fusion.film.alpha", "fusion.film.gb1", "fusion.film.gb2", "fusion.film.gate"]
        .into_iter()
        .map(|prefix| {
            let checked = ids(&store, &[prefix]);
            let report = gradcheck_params(&store, &checked, GRAD_EPS, |g, s| {
                loss(&film, [&f_ms, &s_ctx, &weights], g, s)
            });
            (prefix, report)
        })
        .collect()
}

pub fn dann_gradcheck() -> GradcheckReport {
    let mut store = ParamStore::<f64>::new();
    let cfg = DannConfig {
        hidden: 12,
        ..DannConfig::default()
    };
    let head = DannHead::new(&mut Builder::new(&mut store, 9), "dann.thermal", 10, 4, &cfg);
    let feats = wave(&[6, 10], 0.37, 0.2);
    let domains = [0, 1, 2, 3, 1, 2];
    let checked = store.trainable_ids();
    // dropout masks depend only on the context seed, so every evaluation
    // sees the same mask
    gradcheck_params(&store, &checked, GRAD_EPS, |g, s| {
        let cx = Ctx::new(g, s, Mode::Train, 17);
        head.loss(&cx, cx.constant(feats.clone()), &domains)
    })
}
