use fryshort_autograd::{Exec, Graph, ParamStore, Tensor};
use fryshort_core::adversarial::{coral_loss, mmd_loss, DannConfig, DannHead, DomainIndex};
use fryshort_core::config::{Preset, RunConfig, TrainConfig};
use fryshort_core::fusion::{FilmFuse, FusionConfig, MultiScaleFuse};
use fryshort_core::heads_losses::{majority_vote, total_loss, LossParts, LossTerm, LossWeights, SegHead};
use fryshort_core::model::{Batch, FryNet};
use fryshort_core::nn::{Builder, Ctx, Mode};
use fryshort_core::rgb_mae_encoder::{patchify, sample_mask, EncoderConfig, MaskPlan, RgbMaeEncoder};
use fryshort_core::synthdata::{classify_totox, Dataset, OilClass, Split, SynthConfig};
use fryshort_core::thermal_backbone::{BackboneConfig, ThermalBackbone};
use fryshort_core::train_eval::data::{collate, Sample};
use fryshort_core::train_eval::lr_at;
use fryshort_core::FryError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn wave(shape: &[usize], k: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_f64(shape.to_vec(), &(0..n).map(|i| (i as f64 * k + 0.3).sin()).collect::<Vec<_>>())
}

/// 32x32 frames, four train videos.
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

fn train_batch(ds: &Dataset) -> Batch<f64> {
    let samples: Vec<Sample> = ds
        .manifest
        .split_videos(Split::Train)
        .iter()
        .map(|v| Sample::plain(ds.frame(v.video_id, 0)))
        .collect();
    collate(ds, &samples)
}

fn plans_for(n: usize, tokens: usize, seed: u64) -> Vec<MaskPlan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sample_mask(tokens, 0.75, &mut rng)).collect()
}

#[test]
fn totox_boundary_is_exact() {
    assert_eq!(classify_totox(25.0), OilClass::Replace);
    assert_eq!(classify_totox(24.999), OilClass::Good);
}

#[test]
fn grl_is_identity_forward_and_negation_backward() {
    let g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec([2], vec![1.0, -2.0]));
    let y = x.grl(1.0);
    assert_eq!(y.value().data(), &[1.0, -2.0]);
    let grads = g.backward_with(y, Tensor::from_vec([2], vec![1.0, 2.0]));
    assert_eq!(grads.of(x).unwrap().data(), &[-1.0, -2.0]);

    // finite differences of the negated surrogate -sum(c * x)
    let c = [0.7, -1.3, 2.1];
    let x0 = [0.2, -0.4, 1.5];
    let g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec([3], x0.to_vec()));
    let grads = g.backward(x.grl(1.0).mul_const(&Tensor::from_vec([3], c.to_vec())).sum_all());
    let analytic = grads.of(x).unwrap().data().to_vec();
    let surrogate = |v: &[f64]| -v.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
    let eps = 1e-6;
    for i in 0..3 {
        let (mut up, mut down) = (x0, x0);
        up[i] += eps;
        down[i] -= eps;
        let fd = (surrogate(&up) - surrogate(&down)) / (2.0 * eps);
        assert!((analytic[i] - fd).abs() <= 1e-6 * fd.abs(), "{} vs {fd}", analytic[i]);
        assert_eq!(analytic[i], -c[i]);
    }
}

#[test]
fn tca_and_tsa_are_exact_identity_in_a_fresh_backbone() {
    let mut store = ParamStore::<f64>::new();
    let bb = ThermalBackbone::new(&mut Builder::new(&mut store, 4), &BackboneConfig::default()).unwrap();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    for (stage, c) in [16usize, 32, 48, 64].into_iter().enumerate() {
        let x = g.constant(wave(&[2, c, 6, 5], 0.9 + stage as f64));
        let tca = bb.tca(stage).unwrap().forward(&cx, x);
        let tsa = bb.tsa(stage).unwrap().forward(&cx, x);
        assert_eq!(tca.value().max_abs_diff(&x.value()), 0.0);
        assert_eq!(tsa.value().max_abs_diff(&x.value()), 0.0);
    }
}

#[test]
fn tsa_gate_lies_in_unit_interval() {
    let mut store = ParamStore::<f64>::new();
    let bb = ThermalBackbone::new(&mut Builder::new(&mut store, 4), &BackboneConfig::default()).unwrap();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let x = g.constant(wave(&[1, 16, 9, 9], 3.7).map(|v| v * 50.0));
    let gate = bb.tsa(0).unwrap().gate(&cx, x).value();
    assert!(gate.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn attention_budget_is_under_one_percent_at_full_width() {
    let mut store = ParamStore::<f32>::new();
    ThermalBackbone::new(&mut Builder::new(&mut store, 0), &BackboneConfig::paper()).unwrap();
    let total = store.count_with_prefix("backbone.");
    let attn: usize = (1..=4)
        .map(|i| store.count_with_prefix(&format!("backbone.stage{i}.tca")) + store.count_with_prefix(&format!("backbone.stage{i}.tsa")))
        .sum();
    assert!(attn > 0);
    assert!((attn as f64) < 0.01 * total as f64, "{attn} of {total}");
}

#[test]
fn full_width_pyramid_shapes() {
    let cfg = BackboneConfig {
        stage_depths: [1, 1, 1, 1],
        ..BackboneConfig::paper()
    };
    let mut store = ParamStore::<f32>::new();
    let bb = ThermalBackbone::new(&mut Builder::new(&mut store, 0), &cfg).unwrap();
    let g = Graph::with_exec(Exec::auto());
    let cx = Ctx::new(&g, &store, Mode::Eval, 0);
    let p = bb.forward(&cx, g.constant(Tensor::full([1, 1, 512, 512], 0.5f32))).unwrap();
    assert_eq!(p.f1().shape(), vec![1, 64, 128, 128]);
    assert_eq!(p.f4().shape(), vec![1, 512, 16, 16]);
}

#[test]
fn film_identity_and_gate_at_init() {
    let mut store = ParamStore::<f64>::new();
    let film = FilmFuse::new(&mut Builder::new(&mut store, 2), &FusionConfig::default(), 64);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let f = g.constant(wave(&[2, 64, 8, 8], 0.13));
    let s = g.constant(wave(&[2, 64, 8, 8], 0.57));
    let parts = film.forward_parts(&cx, f, s).unwrap();
    let gn = film.norm.forward(&cx, f).value();
    assert!(parts.out.value().max_abs_diff(&gn) <= 1e-5);
    let gate = parts.gate.value();
    let mean = gate.sum() / gate.numel() as f64;
    assert!((0.975..=0.99).contains(&mean), "{mean}");
}

#[test]
fn film_identity_through_resolution_change() {
    let mut store = ParamStore::<f64>::new();
    let film = FilmFuse::new(&mut Builder::new(&mut store, 2), &FusionConfig::default(), 64);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let f = g.constant(wave(&[1, 64, 16, 16], 0.21));
    let s = g.constant(wave(&[1, 64, 8, 8], 0.4));
    let out = film.forward(&cx, f, s).unwrap();
    let expect = film.norm.forward(&cx, f.resize_bilinear(8, 8)).resize_bilinear(16, 16);
    assert!(out.value().max_abs_diff(&expect.value()) < 1e-12);
    assert_eq!(out.shape(), f.shape());
    let finer = g.constant(wave(&[1, 64, 32, 32], 0.4));
    assert!(matches!(film.forward(&cx, f, finer), Err(FryError::Config(_))));
}

#[test]
fn film_parameter_count_near_fifty_thousand() {
    let mut store = ParamStore::<f32>::new();
    FilmFuse::new(&mut Builder::new(&mut store, 0), &FusionConfig::paper(), 256);
    let n = store.num_trainable() as f64;
    assert!((n - 50_000.0).abs() <= 0.2 * 50_000.0, "{n}");
}

#[test]
fn multiscale_fuse_toy_shape() {
    let mut store = ParamStore::<f32>::new();
    let mut b = Builder::new(&mut store, 0);
    let bb = ThermalBackbone::new(&mut b, &BackboneConfig::default()).unwrap();
    let ms = MultiScaleFuse::new(&mut b, &[16, 32, 48, 64], 64);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Eval, 0);
    let p = bb.forward(&cx, g.constant(Tensor::full([1, 1, 64, 64], 0.3f32))).unwrap();
    assert_eq!(ms.forward(&cx, &p).shape(), vec![1, 64, 16, 16]);
}

#[test]
fn regression_losses_leave_trunk_gradients_at_zero() {
    let (cfg, ds) = tiny_run();
    let mut store = ParamStore::<f64>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let batch = train_batch(&ds);
    let plans = plans_for(batch.len(), model.n_tokens().unwrap(), 1);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let out = model.forward(&cx, &batch.thermal, &batch.rgb, Some(&plans)).unwrap();
    let parts = model.loss_parts(&cx, &batch, &out, Some(&plans)).unwrap();
    let reg = [LossTerm::Pv, LossTerm::PAv, LossTerm::Totox, LossTerm::Temp]
        .iter()
        .map(|&t| parts.get(t).unwrap())
        .reduce(|a, b| a.add(b))
        .unwrap();
    let grads = g.backward(reg);
    let mut head_grad = 0.0;
    for id in store.trainable_ids() {
        let name = store.name(id);
        let norm = grads.param(id).map_or(0.0, |t| t.sq_norm());
        if name.starts_with("backbone.") || name.starts_with("fusion.") || name.starts_with("encoder.") {
            assert_eq!(norm, 0.0, "{name}");
        }
        if name.starts_with("heads.reg.") {
            head_grad += norm;
        }
    }
    assert!(head_grad > 0.0);
}

#[test]
fn seg_only_objective_reaches_only_the_segmentation_path() {
    let (mut cfg, ds) = tiny_run();
    cfg.loss = LossWeights {
        seg: 1.0,
        aux: 0.0,
        totox: 0.0,
        pv: 0.0,
        p_av: 0.0,
        temp: 0.0,
        mae: 0.0,
        chem: 0.0,
        dann: 0.0,
        rgb_dann: 0.0,
    };
    let mut store = ParamStore::<f64>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let batch = train_batch(&ds);
    let plans = plans_for(batch.len(), model.n_tokens().unwrap(), 2);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let out = model.forward(&cx, &batch.thermal, &batch.rgb, Some(&plans)).unwrap();
    let parts = model.loss_parts(&cx, &batch, &out, Some(&plans)).unwrap();
    let grads = g.backward(model.objective(&cx, &parts, &cfg.loss).unwrap());
    let allowed = ["backbone.", "fusion.", "heads.seg", "encoder."];
    let (mut seg, mut trunk) = (0.0, 0.0);
    for id in store.trainable_ids() {
        let name = store.name(id);
        let norm = grads.param(id).map_or(0.0, |t| t.sq_norm());
        if !allowed.iter().any(|p| name.starts_with(p)) {
            assert_eq!(norm, 0.0, "{name}");
        }
        if name.starts_with("heads.seg") {
            seg += norm;
        }
        if name.starts_with("backbone.") {
            trunk += norm;
        }
    }
    assert!(seg > 0.0 && trunk > 0.0);
}

#[test]
fn aux_weight_switches_its_gradient() {
    let (cfg, ds) = tiny_run();
    let mut store = ParamStore::<f64>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let batch = train_batch(&ds);
    let plans = plans_for(batch.len(), model.n_tokens().unwrap(), 3);
    let aux_norm = |weights: &LossWeights| {
        let g = Graph::new();
        let cx = Ctx::new(&g, &store, Mode::Train, 0);
        let out = model.forward(&cx, &batch.thermal, &batch.rgb, Some(&plans)).unwrap();
        let parts = model.loss_parts(&cx, &batch, &out, Some(&plans)).unwrap();
        let grads = g.backward(model.objective(&cx, &parts, weights).unwrap());
        store
            .ids_with_prefix("heads.aux")
            .iter()
            .map(|&id| grads.param(id).map_or(0.0, |t| t.sq_norm()))
            .sum::<f64>()
    };
    assert!(aux_norm(&cfg.loss) > 0.0);
    let off = LossWeights { aux: 0.0, ..cfg.loss.clone() };
    assert_eq!(aux_norm(&off), 0.0);
}

#[test]
fn unfused_regression_ignores_rgb_context() {
    let (mut cfg, ds) = tiny_run();
    cfg.train.variant.fused_regression = false;
    let mut store = ParamStore::<f64>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let batch = train_batch(&ds);
    let reg = |rgb: &Tensor<f64>| {
        let g = Graph::new();
        let cx = Ctx::new(&g, &store, Mode::Eval, 0);
        model.forward(&cx, &batch.thermal, rgb, None).unwrap().reg_z.value()
    };
    let bright = batch.rgb.map(|v| (v * 0.3 + 0.6).min(1.0));
    assert_eq!(reg(&batch.rgb), reg(&bright));
}

#[test]
fn mask_plan_counts() {
    let plan = sample_mask(64, 0.75, &mut ChaCha8Rng::seed_from_u64(11));
    assert_eq!(plan.masked.len(), 48);
    assert_eq!(plan.visible.len(), 16);
    let mut all: Vec<usize> = plan.masked.iter().chain(&plan.visible).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..64).collect::<Vec<_>>());
}

#[test]
fn total_loss_of_unit_parts() {
    let g = Graph::<f64>::new();
    let mut parts = LossParts::default();
    for t in LossTerm::ALL {
        parts.push(t, g.constant(Tensor::scalar(1.0)));
    }
    let w = LossWeights::default();
    let total = total_loss(&g, &parts, &w, &LossTerm::ALL).unwrap().item();
    assert!((total - 3.8).abs() < 1e-9);

    let mut zero = LossParts::default();
    for t in LossTerm::ALL {
        zero.push(t, g.constant(Tensor::scalar(0.0)));
    }
    assert_eq!(total_loss(&g, &zero, &w, &LossTerm::ALL).unwrap().item(), 0.0);

    for t in LossTerm::ALL {
        let mut bumped = LossParts::default();
        for s in LossTerm::ALL {
            bumped.push(s, g.constant(Tensor::scalar(if s == t { 2.0 } else { 1.0 })));
        }
        let b = total_loss(&g, &bumped, &w, &LossTerm::ALL).unwrap().item();
        assert!((b - total - w.get(t)).abs() < 1e-12);
    }
}

#[test]
fn distribution_losses_vanish_on_identical_groups() {
    let g = Graph::<f64>::new();
    let base = wave(&[3, 5], 0.8);
    let stacked = Tensor::from_vec([6, 5], base.data().iter().chain(base.data()).copied().collect());
    let x = g.constant(stacked);
    let groups = [0, 0, 0, 1, 1, 1];
    assert!(mmd_loss(x, &groups, None).value.item().abs() <= 1e-6);
    assert!(coral_loss(x, &groups).value.item().abs() <= 1e-6);
}

#[test]
fn distribution_losses_ignore_order_within_groups() {
    let g = Graph::<f64>::new();
    let t = wave(&[6, 4], 1.7);
    let perm = [2usize, 0, 1, 5, 3, 4];
    let shuffled = Tensor::from_vec(
        [6, 4],
        perm.iter().flat_map(|&i| t.data()[i * 4..(i + 1) * 4].to_vec()).collect(),
    );
    let groups = [0, 0, 0, 1, 1, 1];
    let (a, b) = (g.constant(t), g.constant(shuffled));
    let close = |x: f64, y: f64| (x - y).abs() < 1e-12;
    assert!(close(mmd_loss(a, &groups, None).value.item(), mmd_loss(b, &groups, None).value.item()));
    assert!(close(coral_loss(a, &groups).value.item(), coral_loss(b, &groups).value.item()));
}

#[test]
fn coral_covariance_term_scales_with_fourth_power() {
    // equal group means, so only the covariance term is present
    let g = Graph::<f64>::new();
    let x = |c: f64| g.constant(Tensor::from_vec([4, 1], vec![0.0, 0.0, -c, c]));
    let base = coral_loss(x(1.0), &[0, 0, 1, 1]).value.item();
    let scaled = coral_loss(x(3.0), &[0, 0, 1, 1]).value.item();
    assert!((scaled - 81.0 * base).abs() < 1e-9);
}

#[test]
fn mmd_closed_form() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_vec([2, 2], vec![0.0, 0.0, 1.0, 0.0]));
    let v = mmd_loss(x, &[0, 1], Some(1.0)).value.item();
    assert!((v - 0.7869).abs() < 1e-4);
}

#[test]
fn warmup_endpoint_is_exact() {
    let t = TrainConfig::paper();
    assert_eq!(lr_at(t.warmup_iters, &t).unwrap(), 6e-5);
    assert_eq!(lr_at(0, &t).unwrap(), 6e-5 / 1500.0);
    let last = lr_at(t.total_iters - 1, &t).unwrap();
    assert!((last - 6e-5 / (40_000.0 - 1500.0)).abs() < 1e-15);
    assert!(matches!(lr_at(t.total_iters, &t), Err(FryError::Validation(_))));
}

#[test]
fn uniform_domain_logits_give_log_twenty() {
    let mut store = ParamStore::<f64>::new();
    let cfg = DannConfig::default();
    let head = DannHead::new(&mut Builder::new(&mut store, 0), "dann", 8, 20, &cfg);
    let fc2 = head.fc2.w;
    store.set(fc2, Tensor::zeros(store.get(fc2).shape().to_vec()));
    store.set(head.fc2.b.unwrap(), Tensor::zeros([20]));
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let loss = head.loss(&cx, g.constant(wave(&[4, 8], 0.5)), &[0, 5, 7, 19]).item();
    assert!((loss - 20f64.ln()).abs() < 1e-12);
}

#[test]
fn dann_gradient_reaches_features_reversed() {
    let mut store = ParamStore::<f64>::new();
    let cfg = DannConfig { dropout: 0.0, ..DannConfig::default() };
    let head = DannHead::new(&mut Builder::new(&mut store, 5), "dann", 6, 3, &cfg);
    let feats = wave(&[4, 6], 0.9);
    let domains = [0, 1, 2, 1];
    let grad_of = |reverse: bool| {
        let g = Graph::new();
        let cx = Ctx::new(&g, &store, Mode::Train, 0);
        let x = g.leaf(feats.clone());
        let loss = if reverse {
            head.loss(&cx, x, &domains)
        } else {
            head.logits(&cx, x).cross_entropy(&domains)
        };
        let grads = g.backward(loss);
        let head_grads: Vec<Tensor<f64>> = store.trainable_ids().iter().map(|&id| grads.param(id).unwrap().clone()).collect();
        (grads.of(x).unwrap().clone(), head_grads)
    };
    let (through_grl, head_a) = grad_of(true);
    let (plain, head_b) = grad_of(false);
    for (a, b) in through_grl.data().iter().zip(plain.data()) {
        assert_eq!(*a, -*b);
    }
    // the head itself still descends on its own loss
    for (a, b) in head_a.iter().zip(&head_b) {
        assert_eq!(a, b);
    }
}

#[test]
fn held_out_frames_cannot_reach_domain_losses() {
    let (cfg, ds) = tiny_run();
    let mut store = ParamStore::<f64>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let val_video = ds.manifest.split_videos(Split::Val)[0].video_id;
    let mut samples: Vec<Sample> = ds
        .manifest
        .split_videos(Split::Train)
        .iter()
        .take(2)
        .map(|v| Sample::plain(ds.frame(v.video_id, 0)))
        .collect();
    samples.push(Sample::plain(ds.frame(val_video, 0)));
    let batch: Batch<f64> = collate(&ds, &samples);
    let plans = plans_for(batch.len(), model.n_tokens().unwrap(), 4);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let out = model.forward(&cx, &batch.thermal, &batch.rgb, Some(&plans)).unwrap();
    let err = model.loss_parts(&cx, &batch, &out, Some(&plans)).err().unwrap();
    assert!(matches!(err, FryError::Contract(_)), "{err}");
}

#[test]
fn method_none_registers_no_domain_heads() {
    let (mut cfg, ds) = tiny_run();
    cfg.model.dann.method = fryshort_core::adversarial::DaMethod::None;
    let mut store = ParamStore::<f32>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    assert!(store.ids_with_prefix("dann").is_empty());
    assert!(!model.active_terms().contains(&LossTerm::Dann));
    assert!(!model.active_terms().contains(&LossTerm::RgbDann));

    cfg.apply_variant("mmd").unwrap();
    let mut store = ParamStore::<f32>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    assert!(store.ids_with_prefix("dann").is_empty());
    assert!(model.active_terms().contains(&LossTerm::Dann));
}

#[test]
fn mae_loss_examples() {
    let mut store = ParamStore::<f64>::new();
    let enc = RgbMaeEncoder::new(&mut Builder::new(&mut store, 0), &EncoderConfig::default(), [16, 16]).unwrap();
    let (w2, b2) = (enc.decoder.fc2.w, enc.decoder.fc2.b.unwrap());
    store.set(w2, Tensor::zeros(store.get(w2).shape().to_vec()));
    store.set(b2, Tensor::zeros([64]));
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let tokens = g.constant(wave(&[1, 4, 64], 0.3));
    let plan = MaskPlan::from_masked(4, vec![1, 2, 3]);
    let ones = Tensor::full([1, 4, 64], 1.0);
    assert!((enc.mae_loss(&cx, tokens, &ones, std::slice::from_ref(&plan)).item() - 1.0).abs() < 1e-15);
    // the visible patch's target is irrelevant
    let mut tweaked = ones.clone();
    tweaked.data_mut()[5] = 40.0;
    assert_eq!(enc.mae_loss(&cx, tokens, &tweaked, std::slice::from_ref(&plan)).item(), 1.0);
    let zeros = Tensor::zeros([1, 4, 64]);
    assert_eq!(enc.mae_loss(&cx, tokens, &zeros, std::slice::from_ref(&plan)).item(), 0.0);
}

#[test]
fn chem_alignment_huber_branches() {
    let mut store = ParamStore::<f64>::new();
    let enc = RgbMaeEncoder::new(&mut Builder::new(&mut store, 0), &EncoderConfig::default(), [16, 16]).unwrap();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let tokens = g.constant(wave(&[2, 4, 64], 0.6));
    let pred = enc.chem_predict(&cx, tokens).value();
    let shifted = |d: f64| pred.map(|v| v + d);
    assert_eq!(enc.chem_align(&cx, tokens, &pred).item(), 0.0);
    assert!((enc.chem_align(&cx, tokens, &shifted(0.5)).item() - 0.125).abs() < 1e-12);
    assert!((enc.chem_align(&cx, tokens, &shifted(-2.0)).item() - 1.5).abs() < 1e-12);
}

#[test]
fn encoder_token_counts_and_inference_path() {
    let mut store = ParamStore::<f32>::new();
    let enc = RgbMaeEncoder::new(&mut Builder::new(&mut store, 0), &EncoderConfig::default(), [64, 64]).unwrap();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let rgb = g.constant(Tensor::full([1, 3, 64, 64], 0.4f32));
    let th = g.constant(Tensor::full([1, 64, 64], 0.6f32));
    let plans = vec![sample_mask(64, 0.75, &mut ChaCha8Rng::seed_from_u64(0))];
    let out = enc.forward_train(&cx, th, rgb, &plans).unwrap();
    let total = out.thermal_tokens.unwrap().dim(1) + out.rgb_tokens.dim(1);
    assert_eq!(total, 80);
    assert_eq!(enc.context_features(&cx, rgb).unwrap().s_ctx.shape(), vec![1, 64, 8, 8]);
}

#[test]
fn inference_never_touches_decoder_or_chem_head() {
    let (cfg, ds) = tiny_run();
    let mut store = ParamStore::<f32>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let enc = model.encoder.as_ref().unwrap();
    fryshort_core::train_eval::evaluate(&model, &store, &ds, Split::Test, Exec::Sequential).unwrap();
    fryshort_core::train_eval::probe::probe_audit(&model, &store, &ds, 0).unwrap();
    assert_eq!((enc.decoder_calls.get(), enc.chem_calls.get()), (0, 0));
    let batch: Batch<f32> = collate(&ds, &[Sample::plain(ds.frame(0, 0)), Sample::plain(ds.frame(1, 0))]);
    let plans = plans_for(2, model.n_tokens().unwrap(), 0);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Train, 0);
    let out = model.forward(&cx, &batch.thermal, &batch.rgb, Some(&plans)).unwrap();
    model.loss_parts(&cx, &batch, &out, Some(&plans)).unwrap();
    assert_eq!((enc.decoder_calls.get(), enc.chem_calls.get()), (1, 1));
}

/// Permuting rgb tokens together with their positional rows permutes the
/// encoder output the same way.
#[test]
fn encoder_is_permutation_equivariant_with_attached_positions() {
    let mut store = ParamStore::<f64>::new();
    let enc = RgbMaeEncoder::new(&mut Builder::new(&mut store, 8), &EncoderConfig::default(), [16, 16]).unwrap();
    let perm = [2usize, 0, 3, 1];
    let patches = patchify(&wave(&[1, 3, 16, 16], 0.37), 8).unwrap();
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Eval, 0);
    let embedded = enc.embed_rgb(&cx, g.constant(patches)).unwrap();
    let permuted = embedded.index_select(1, &perm);
    let a = enc.run_blocks(&cx, embedded).index_select(1, &perm).value();
    let b = enc.run_blocks(&cx, permuted).value();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn segmentation_head_shapes_and_uniform_loss() {
    let mut store = ParamStore::<f64>::new();
    let head = SegHead::new(&mut Builder::new(&mut store, 0), 64);
    let g = Graph::new();
    let cx = Ctx::new(&g, &store, Mode::Eval, 0);
    let logits = head.forward(&cx, g.constant(wave(&[1, 64, 16, 16], 0.2)), 64, 64);
    assert_eq!(logits.shape(), vec![1, 3, 64, 64]);
    let uniform = g.constant(Tensor::zeros([2, 3, 4, 4]));
    let labels: Vec<usize> = (0..32).map(|i| i % 3).collect();
    assert!((uniform.cross_entropy(&labels).item() - 3f64.ln()).abs() < 1e-12);
    let mut last = f64::INFINITY;
    for scale in [1.0, 2.0, 4.0, 8.0] {
        let onehot: Vec<f64> = (0..3 * 16)
            .map(|i| if i / 16 == labels[i % 16] { scale } else { 0.0 })
            .collect();
        let l = g.constant(Tensor::from_vec([1, 3, 4, 4], onehot)).cross_entropy(&labels[..16]).item();
        assert!(l < last);
        last = l;
    }
}

#[test]
fn majority_vote_rules() {
    let mut sixty_forty = vec![1u8; 60];
    sixty_forty.extend([2u8; 40]);
    sixty_forty.extend([0u8; 200]);
    assert_eq!(majority_vote(&sixty_forty), OilClass::Good);
    assert_eq!(majority_vote(&[0u8; 16]), OilClass::Replace);
    assert_eq!(majority_vote(&[1, 1, 2, 2, 0]), OilClass::Replace);
}

#[test]
fn checkpoint_round_trip_restores_predictions() {
    use fryshort_core::checkpoint::{param_digest, Checkpoint};
    let (cfg, ds) = tiny_run();
    let mut store = ParamStore::<f32>::new();
    let model = FryNet::new(&mut store, &cfg, DomainIndex::from_manifest(&ds.manifest)).unwrap();
    let ck = Checkpoint {
        config: cfg.clone(),
        manifest_digest: ds.manifest.digest(),
        domain_ids: ds.manifest.train_domain_ids(),
        iteration: 7,
        store: store.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    ck.save(&path).unwrap();
    let (back, rebuilt) = Checkpoint::load(&path).unwrap();
    assert_eq!(param_digest(&back.store), param_digest(&store));
    assert_eq!((back.iteration, back.config), (7, cfg));
    let (a, _) = fryshort_core::train_eval::evaluate(&model, &store, &ds, Split::Val, Exec::Sequential).unwrap();
    let (b, _) = fryshort_core::train_eval::evaluate(&rebuilt, &back.store, &ds, Split::Val, Exec::Sequential).unwrap();
    assert_eq!(a, b);
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() / 2);
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(FryError::Format(_))));
}
