//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2, 3 and 7 are exact and fail the test. Criteria 4 to 6 are
//! directional outcomes of nine 2000-iteration trainings; their lines report
//! the measured verdict without failing the target. The shortcut runs take
//! roughly 45 minutes on one core.

mod common;

use std::io::Write;

use fryshort_autograd::{Exec, Graph, ParamStore, Tensor};
use fryshort_core::adversarial::{coral_loss, mmd_loss, DomainIndex};
use fryshort_core::config::{Preset, RunConfig, TrainConfig};
use fryshort_core::fusion::{FilmFuse, FusionConfig};
use fryshort_core::heads_losses::{total_loss, LossParts, LossTerm, LossWeights};
use fryshort_core::model::{Batch, FryNet};
use fryshort_core::nn::{Builder, Ctx, Mode};
use fryshort_core::rgb_mae_encoder::sample_mask;
use fryshort_core::synthdata::{classify_totox, write_dataset, Dataset, OilClass, Split, SynthConfig};
use fryshort_core::thermal_backbone::{BackboneConfig, ThermalBackbone};
use fryshort_core::train_eval::data::{collate, Sample};
use fryshort_core::train_eval::{evaluate, lr_at, probe_audit, train, MetricsReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{wave, GRAD_TOL};

const SEEDS: [u64; 3] = [0, 1, 2];
const REQUIRED: usize = 2;

const FILM_IDENTITY_TOL: f64 = 1e-5;
const GATE_MEAN: [f64; 2] = [0.975, 0.99];
const GRL_FD_TOL: f64 = 1e-6;
const UNIT_LOSS: f64 = 3.8;
const UNIT_LOSS_TOL: f64 = 1e-9;
const DIST_TOL: f64 = 1e-6;
const WARMUP_LR: f64 = 6e-5;

const THERMAL_TRAIN_MIOU: f64 = 90.0;
const THERMAL_TEST_CLS_MAX: f64 = 70.0;
const FULL_TEST_MIOU: f64 = 85.0;
const FULL_TEST_CLS: f64 = 100.0;
const PROBE_GAP_PP: f64 = 20.0;
const ITER0_LOSS_TOL: f64 = 1e-6;

struct Gate {
    hard_failures: Vec<u8>,
}

impl Gate {
    fn line(&mut self, id: u8, name: &str, pass: bool, hard: bool, detail: &str) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        let kind = if hard { "exact" } else { "directional" };
        // written to the raw handle so the line survives test output capture
        let mut out = std::io::stdout().lock();
        writeln!(out, "acceptance {id} [{verdict}] {name} ({kind}): {detail}").unwrap();
        out.flush().unwrap();
        if hard && !pass {
            self.hard_failures.push(id);
        }
    }
}

/// Collects named sub-checks; the criterion passes when all of them do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    n: usize,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool) {
        self.n += 1;
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    fn summary(&self) -> String {
        if self.failed.is_empty() {
            format!("{} checks", self.n)
        } else {
            format!("{} of {} failed: {}", self.failed.len(), self.n, self.failed.join(", "))
        }
    }
}

fn tiny_run() -> (RunConfig, Dataset) {
    let mut cfg = Preset::Toy.config();
    cfg.videos = SynthConfig {
        total: 6,
        train: Some(4),
        val: Some(1),
        test: Some(1),
        frames_per_video: 2,
        image_size: [32, 32],
        ..SynthConfig::default()
    };
    let ds = Dataset::generate(&cfg.videos).unwrap();
    (cfg, ds)
}

fn exact_invariants() -> Checks {
    let mut c = Checks::default();

    let m = fryshort_core::synthdata::sample_manifest(&SynthConfig::default()).unwrap();
    c.check(
        "totox identity",
        m.videos.iter().all(|v| v.chem.totox == 2.0 * v.chem.pv + v.chem.p_av),
    );
    c.check(
        "totox boundary",
        classify_totox(25.0) == OilClass::Replace && classify_totox(24.999) == OilClass::Good,
    );

    let g = Graph::<f64>::new();
    let x0 = [0.2, -0.4, 1.5];
    let x = g.leaf(Tensor::from_vec([3], x0.to_vec()));
    let y = x.grl(1.0);
    c.check("grl forward", y.value().data() == x0);
    let up = [0.7, -1.3, 2.1];
    let grads = g.backward_with(y, Tensor::from_vec([3], up.to_vec()));
    let gx = grads.of(x).unwrap().data().to_vec();
    c.check("grl backward", gx.iter().zip(&up).all(|(a, b)| *a == -b));
    // finite differences of the negated surrogate -sum(up * x)
    let surrogate = |v: &[f64]| -v.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>();
    let eps = 1e-6;
    let fd_ok = (0..3).all(|i| {
        let (mut hi, mut lo) = (x0, x0);
        hi[i] += eps;
        lo[i] -= eps;
        let fd = (surrogate(&hi) - surrogate(&lo)) / (2.0 * eps);
        (fd - gx[i]).abs() <= GRL_FD_TOL * gx[i].abs().max(1.0)
    });
    c.check("grl finite differences", fd_ok);

    let mut store = ParamStore::<f64>::new();
    let bb = ThermalBackbone::new(&mut Builder::new(&mut store, 4), &BackboneConfig::default()).unwrap();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let identity = [16usize, 32, 48, 64].into_iter().enumerate().all(|(stage, ch)| {
        let x = g.constant(wave(&[2, ch, 6, 5], 0.9 + stage as f64, 0.3));
        let tca = bb.tca(stage).unwrap().forward(&cx, x).value();
        let tsa = bb.tsa(stage).unwrap().forward(&cx, x).value();
        tca.max_abs_diff(&x.value()) == 0.0 && tsa.max_abs_diff(&x.value()) == 0.0
    });
    c.check("tca/tsa identity", identity);

    let mut store = ParamStore::<f64>::new();
    let film = FilmFuse::new(&mut Builder::new(&mut store, 2), &FusionConfig::default(), 64);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let f = g.constant(wave(&[2, 64, 8, 8], 0.13, 0.3));
    let s = g.constant(wave(&[2, 64, 8, 8], 0.57, 0.3));
    let parts = film.forward_parts(&cx, f, s).unwrap();
    let gn = film.norm.forward(&cx, f).value();
    c.check("film identity", parts.out.value().max_abs_diff(&gn) <= FILM_IDENTITY_TOL);
    let gate = parts.gate.value();
    let mean = gate.sum() / gate.numel() as f64;
    c.check("film gate mean", (GATE_MEAN[0]..=GATE_MEAN[1]).contains(&mean));

    let (cfg, ds) = tiny_run();
    let mut store = ParamStore::<f64>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let samples: Vec<Sample> = ds
        .manifest
        .split_videos(Split::Train)
        .iter()
        .map(|v| Sample::plain(ds.frame(v.video_id, 0)))
        .collect();
    let batch: Batch<f64> = collate(&ds, &samples);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let plans: Vec<_> = (0..batch.len())
        .map(|_| sample_mask(model.n_tokens().unwrap(), 0.75, &mut rng))
        .collect();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let out = model.forward(&cx, &batch.thermal, &batch.rgb, Some(&plans)).unwrap();
    let lp = model.loss_parts(&cx, &batch, &out, Some(&plans)).unwrap();
    let reg = [LossTerm::Pv, LossTerm::PAv, LossTerm::Totox, LossTerm::Temp]
        .iter()
        .map(|&t| lp.get(t).unwrap())
        .reduce(|a, b| a.add(b))
        .unwrap();
    let grads = g.backward(reg);
    let trunk_zero = store.trainable_ids().into_iter().all(|id| {
        let name = store.name(id);
        let trunk = name.starts_with("backbone.") || name.starts_with("fusion.");
        !trunk || grads.param(id).map_or(0.0, |t| t.sq_norm()) == 0.0
    });
    c.check("regression stop-gradient", trunk_zero);

    let plan = sample_mask(64, 0.75, &mut ChaCha8Rng::seed_from_u64(11));
    c.check("mask plan 48 of 64", plan.masked.len() == 48);

    let g = Graph::<f64>::new();
    let mut unit = LossParts::default();
    for t in LossTerm::ALL {
        unit.push(t, g.constant(Tensor::scalar(1.0)));
    }
    let total = total_loss(&g, &unit, &LossWeights::default(), &LossTerm::ALL).unwrap().item();
    c.check("total loss of unit parts", (total - UNIT_LOSS).abs() < UNIT_LOSS_TOL);

    let base = wave(&[3, 5], 0.8, 0.3);
    let stacked = Tensor::from_vec([6, 5], base.data().iter().chain(base.data()).copied().collect());
    let x = g.constant(stacked);
    let groups = [0, 0, 0, 1, 1, 1];
    c.check("mmd identical groups", mmd_loss(x, &groups, None).value.item().abs() <= DIST_TOL);
    c.check("coral identical groups", coral_loss(x, &groups).value.item().abs() <= DIST_TOL);

    let t = TrainConfig::paper();
    c.check("warmup lr", lr_at(t.warmup_iters, &t).unwrap() == WARMUP_LR);
    c
}

fn oracle_equivalence() -> Checks {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mask = |rng: &mut ChaCha8Rng| (0..64).map(|_| rng.gen_range(0..3u8)).collect::<Vec<_>>();
    let all_equal = (0..100).all(|_| {
        let pair = vec![(mask(&mut rng), mask(&mut rng))];
        common::fast_metrics(&pair) == common::naive_metrics(&pair)
    });
    c.check("100 random 8x8 pairs", all_equal);
    let (miou, _) = common::fast_metrics(&[(vec![0, 0, 1, 1], vec![0, 1, 1, 1])]);
    c.check("2x2 worked example", (miou - 7.0 / 12.0).abs() < 1e-15);
    c
}

fn gradient_checks() -> (bool, String) {
    let mut reports = vec![
        ("mae", common::mae_gradcheck()),
        ("chem", common::chem_gradcheck()),
        ("dann", common::dann_gradcheck()),
    ];
    reports.extend(common::film_gradchecks());
    let pass = reports.iter().all(|(_, r)| r.checked > 0 && r.max_rel_err < GRAD_TOL);
    let detail = reports
        .iter()
        .map(|(n, r)| format!("{n} {:.1e}", r.max_rel_err))
        .collect::<Vec<_>>()
        .join(", ");
    (pass, format!("max rel err {detail}; tol {GRAD_TOL:e}"))
}

fn shortcut_config(variant: &str, seed: u64) -> RunConfig {
    let mut cfg = Preset::Toy.config();
    cfg.videos.total = 14;
    cfg.videos.train = Some(10);
    cfg.videos.val = Some(2);
    cfg.videos.test = Some(2);
    cfg.videos.shortcut_strength = 3.0;
    cfg.apply_variant(variant).unwrap();
    cfg.seed = seed;
    cfg.train.total_iters = 2000;
    cfg.train.batch_size = 4;
    cfg
}

struct RunResult {
    train_final: MetricsReport,
    test_best: MetricsReport,
    probe: f64,
}

fn shortcut_run(variant: &str, seed: u64, ds: &Dataset) -> RunResult {
    let cfg = shortcut_config(variant, seed);
    let out = train(&cfg, ds, Exec::auto(), None).unwrap();
    let (train_final, _) = evaluate(&out.model, &out.store, ds, Split::Train, Exec::auto()).unwrap();
    let (test_best, _) = evaluate(&out.model, &out.best_store, ds, Split::Test, Exec::auto()).unwrap();
    let probe = probe_audit(&out.model, &out.best_store, ds, seed).unwrap();
    let mut log = std::io::stdout().lock();
    writeln!(
        log,
        "  run {variant} seed {seed}: best iter {} train mIoU {:.1} test mIoU {:.1} test cls {:.1} test MAE {:.2} probe {:.1}",
        out.best_iter, train_final.miou, test_best.miou, test_best.cls_acc, test_best.mean_mae, probe
    )
    .unwrap();
    RunResult {
        train_final,
        test_best,
        probe,
    }
}

fn count(flags: &[bool]) -> usize {
    flags.iter().filter(|&&f| f).count()
}

fn determinism() -> (bool, String) {
    let cfg = {
        let mut c = shortcut_config("full", 5);
        c.train.total_iters = 2;
        c.train.warmup_iters = 1;
        c
    };
    let mut digests = Vec::new();
    let mut losses = Vec::new();
    for _ in 0..2 {
        let ds = Dataset::generate(&cfg.videos).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let written = write_dataset(&ds.manifest, dir.path()).unwrap();
        digests.push((written.checksums.clone(), written.digest()));
        losses.push(train(&cfg, &ds, Exec::Sequential, None).unwrap().iter0_loss);
    }
    let same_manifest = digests[0] == digests[1] && !digests[0].0.is_empty();
    let diff = (losses[0] - losses[1]).abs();
    (
        same_manifest && diff <= ITER0_LOSS_TOL,
        format!(
            "{} frame checksums identical: {same_manifest}; iteration-0 loss {:.9} vs {:.9} (|diff| {diff:.1e}, tol {ITER0_LOSS_TOL:e})",
            digests[0].0.len(),
            losses[0],
            losses[1]
        ),
    )
}

#[test]
fn acceptance_gate() {
    let mut gate = Gate {
        hard_failures: Vec::new(),
    };

    let c = exact_invariants();
    gate.line(1, "exact invariants", c.failed.is_empty(), true, &c.summary());
    let c = oracle_equivalence();
    gate.line(2, "oracle equivalence", c.failed.is_empty(), true, &c.summary());
    let (pass, detail) = gradient_checks();
    gate.line(3, "gradient checks", pass, true, &detail);

    let ds = Dataset::generate(&shortcut_config("full", 0).videos).unwrap();
    let mut thermal = Vec::new();
    let mut full = Vec::new();
    let mut unfused = Vec::new();
    for seed in SEEDS {
        thermal.push(shortcut_run("thermal_only", seed, &ds));
        full.push(shortcut_run("full", seed, &ds));
        unfused.push(shortcut_run("rgb_dual_dann", seed, &ds));
    }

    let collapse: Vec<bool> = thermal
        .iter()
        .map(|r| r.train_final.miou >= THERMAL_TRAIN_MIOU && r.test_best.cls_acc <= THERMAL_TEST_CLS_MAX)
        .collect();
    let fixed: Vec<bool> = full
        .iter()
        .map(|r| r.test_best.miou >= FULL_TEST_MIOU && r.test_best.cls_acc == FULL_TEST_CLS)
        .collect();
    gate.line(
        4,
        "shortcut reproduction, thermal_only collapse",
        count(&collapse) >= REQUIRED,
        false,
        &format!(
            "{}/3 seeds with train mIoU >= {THERMAL_TRAIN_MIOU} and test cls <= {THERMAL_TEST_CLS_MAX}",
            count(&collapse)
        ),
    );
    gate.line(
        4,
        "shortcut reproduction, full variant generalizes",
        count(&fixed) >= REQUIRED,
        false,
        &format!(
            "{}/3 seeds with test mIoU >= {FULL_TEST_MIOU} and test cls == {FULL_TEST_CLS}",
            count(&fixed)
        ),
    );

    let probe_gap: Vec<bool> = thermal
        .iter()
        .zip(&full)
        .map(|(t, f)| t.probe - f.probe >= PROBE_GAP_PP)
        .collect();
    let gaps: Vec<String> = thermal.iter().zip(&full).map(|(t, f)| format!("{:.1}", t.probe - f.probe)).collect();
    gate.line(
        5,
        "probe audit",
        count(&probe_gap) >= REQUIRED,
        false,
        &format!(
            "{}/3 seeds with no-DANN minus full probe accuracy >= {PROBE_GAP_PP} pp (gaps {})",
            count(&probe_gap),
            gaps.join(", ")
        ),
    );

    let fused_better: Vec<bool> = full
        .iter()
        .zip(&unfused)
        .map(|(f, u)| f.test_best.mean_mae < u.test_best.mean_mae)
        .collect();
    let maes: Vec<String> = full
        .iter()
        .zip(&unfused)
        .map(|(f, u)| format!("{:.2} vs {:.2}", f.test_best.mean_mae, u.test_best.mean_mae))
        .collect();
    gate.line(
        6,
        "fused regression routing",
        count(&fused_better) >= REQUIRED,
        false,
        &format!(
            "{}/3 seeds with fused MAE < unfused MAE ({})",
            count(&fused_better),
            maes.join("; ")
        ),
    );

    let (pass, detail) = determinism();
    gate.line(7, "determinism", pass, true, &detail);

    assert!(gate.hard_failures.is_empty(), "exact criteria failed: {:?}", gate.hard_failures);
}
