use std::path::Path;

use fryshort_autograd::Exec;
use fryshort_core::checkpoint::Checkpoint;
use fryshort_core::config::{RunConfig, ABLATION_GRID};
use fryshort_core::heads_losses::LossTerm;
use fryshort_core::synthdata::{write_dataset, Dataset, OilClass, Split, SynthConfig, Target};
use fryshort_core::train_eval::{self, probe_audit, run_ablation, write_table, CurvePoint, MetricsReport};
use fryshort_core::{FryError, Result};

use crate::output::{csv_err, csv_writer, RunDir};
use crate::ConfigArgs;

fn dataset(data: Option<&Path>, videos: &SynthConfig) -> Result<Dataset> {
    match data {
        Some(dir) => Dataset::load(dir),
        None => Dataset::generate(videos),
    }
}

/// Config with a named variant applied, then the overrides re-applied so
/// they win over the variant's switches.
fn resolve_with_variant(args: &ConfigArgs, variant: Option<&str>) -> Result<RunConfig> {
    let mut cfg = args.resolve()?;
    if let Some(v) = variant {
        cfg.apply_variant(v)?;
        let mut tree: toml::Value = toml::from_str(&cfg.to_toml()).expect("config round-trips");
        for o in &args.overrides {
            fryshort_core::config::apply_override(&mut tree, o)?;
        }
        cfg = RunConfig::from_toml(&toml::to_string(&tree).expect("config serializes"))?;
    }
    Ok(cfg)
}

pub fn generate(args: &ConfigArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let mut run = RunDir::create(&args.out, "generate")?;
    run.lock_config(&cfg)?;
    let manifest = fryshort_core::synthdata::sample_manifest(&cfg.videos)?;
    let written = write_dataset(&manifest, &args.out.join("dataset"))?;
    run.log(&format!("dataset {} ({} frames)", written.digest(), written.checksums.len() / 3));
    for split in Split::ALL {
        let vids = written.split_videos(split);
        let good = vids.iter().filter(|v| v.class() == OilClass::Good).count();
        run.log(&format!(
            "{:<5} {:>3} videos  good {:>3}  replace {:>3}",
            split.name(),
            vids.len(),
            good,
            vids.len() - good
        ));
    }
    Ok(())
}

fn curve_header() -> Vec<String> {
    let mut h = vec!["iter".to_string(), "lr".into(), "total".into()];
    h.extend(LossTerm::ALL.iter().map(|t| format!("loss_{}", t.name())));
    h
}

fn curve_row(p: &CurvePoint) -> Vec<String> {
    let mut r = vec![p.iter.to_string(), format!("{:e}", p.lr), format!("{:.6}", p.total)];
    for t in LossTerm::ALL {
        let v = p.terms.iter().find(|(k, _)| *k == t).map(|(_, v)| format!("{v:.6}"));
        r.push(v.unwrap_or_default());
    }
    r
}

pub fn train(args: &ConfigArgs, data: Option<&Path>, variant: Option<&str>, exec: Exec) -> Result<()> {
    let cfg = resolve_with_variant(args, variant)?;
    let mut run = RunDir::create(&args.out, "train")?;
    run.lock_config(&cfg)?;
    let ds = dataset(data, &cfg.videos)?;

    let curves_path = run.metrics("curves.csv");
    let mut curves = csv_writer(&curves_path)?;
    curves.write_record(curve_header()).map_err(csv_err(&curves_path))?;
    let mut write_err = None;
    let log_every = (cfg.train.total_iters / 40).max(1);
    let mut lines = Vec::new();
    let mut observe = |p: &CurvePoint| {
        if let Err(e) = curves.write_record(curve_row(p)) {
            write_err.get_or_insert(e);
        }
        if p.iter % log_every == 0 {
            lines.push(format!("iter {:>6} lr {:.3e} loss {:.4}", p.iter, p.lr, p.total));
        }
    };
    let outcome = train_eval::train(&cfg, &ds, exec, Some(&mut observe))?;
    if let Some(e) = write_err {
        return Err(csv_err(&curves_path)(e));
    }
    curves.flush().map_err(|e| FryError::io(&curves_path, e))?;
    for l in &lines {
        run.log(l);
    }

    let val_path = run.metrics("val.csv");
    let mut val = csv_writer(&val_path)?;
    let mut header = vec!["iter".to_string()];
    header.extend(MetricsReport::csv_header());
    val.write_record(header).map_err(csv_err(&val_path))?;
    for (iter, r) in &outcome.val {
        let mut row = vec![iter.to_string()];
        row.extend(r.csv_row());
        val.write_record(row).map_err(csv_err(&val_path))?;
        run.log(&format!("val@{iter} mIoU {:.2} cls {:.2} mean MAE {:.3}", r.miou, r.cls_acc, r.mean_mae));
    }
    val.flush().map_err(|e| FryError::io(&val_path, e))?;

    let ckpt = |store, iteration| Checkpoint {
        config: cfg.clone(),
        manifest_digest: ds.manifest.digest(),
        domain_ids: ds.manifest.train_domain_ids(),
        iteration,
        store,
    };
    let final_iter = cfg.train.total_iters - 1;
    ckpt(outcome.store, final_iter).save(&run.checkpoints().join("final.safetensors"))?;
    ckpt(outcome.best_store, outcome.best_iter).save(&run.checkpoints().join("best.safetensors"))?;
    run.log(&format!("best checkpoint at iter {}", outcome.best_iter));
    Ok(())
}

/// Loads a checkpoint and the dataset it was trained on.
fn restore(checkpoint: &Path, data: Option<&Path>) -> Result<(Checkpoint, fryshort_core::model::FryNet, Dataset)> {
    let (ck, model) = Checkpoint::load(checkpoint)?;
    let ds = dataset(data, &ck.config.videos)?;
    if ds.manifest.digest() != ck.manifest_digest {
        return Err(FryError::Checksum(format!(
            "dataset {} does not match the checkpoint's {}",
            ds.manifest.digest(),
            ck.manifest_digest
        )));
    }
    Ok((ck, model, ds))
}

pub fn eval(checkpoint: &Path, out: &Path, data: Option<&Path>, split: &str, exec: Exec) -> Result<()> {
    let split = Split::parse(split)?;
    let (ck, model, ds) = restore(checkpoint, data)?;
    let mut run = RunDir::create(out, "eval")?;
    run.lock_config(&ck.config)?;
    let (report, preds) = train_eval::evaluate(&model, &ck.store, &ds, split, exec)?;

    let path = run.metrics(&format!("eval_{}.csv", split.name()));
    let mut w = csv_writer(&path)?;
    w.write_record(MetricsReport::csv_header()).map_err(csv_err(&path))?;
    w.write_record(report.csv_row()).map_err(csv_err(&path))?;
    w.flush().map_err(|e| FryError::io(&path, e))?;

    let path = run.metrics(&format!("predictions_{}.csv", split.name()));
    let mut w = csv_writer(&path)?;
    let mut header = vec!["video_id".to_string(), "frame_idx".into(), "truth".into(), "predicted".into()];
    header.extend(Target::ALL.iter().map(|t| format!("pred_{}", t.name())));
    w.write_record(header).map_err(csv_err(&path))?;
    for p in &preds {
        let mut row = vec![
            p.video_id.to_string(),
            p.frame_idx.to_string(),
            p.truth.name().to_string(),
            p.predicted.name().to_string(),
        ];
        row.extend(p.regression.iter().map(|v| format!("{v:.6}")));
        w.write_record(row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| FryError::io(&path, e))?;
    run.log(&format!(
        "{} (iter {}): mIoU {:.2} mF1 {:.2} cls {:.2} mean MAE {:.3}",
        split.name(),
        ck.iteration,
        report.miou,
        report.mf1,
        report.cls_acc,
        report.mean_mae
    ));
    Ok(())
}

pub fn ablate(args: &ConfigArgs, data: Option<&Path>, variants: &[String], seeds: &[u64], exec: Exec) -> Result<()> {
    let cfg = args.resolve()?;
    let mut run = RunDir::create(&args.out, "ablate")?;
    run.lock_config(&cfg)?;
    let ds = dataset(data, &cfg.videos)?;
    let variants: Vec<String> = if variants.is_empty() {
        ABLATION_GRID.iter().map(|s| s.to_string()).collect()
    } else {
        variants.to_vec()
    };
    let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds.to_vec() };
    let rows = run_ablation(&cfg, &ds, &variants, &seeds, exec)?;
    let path = run.metrics("ablation.csv");
    let file = std::fs::File::create(&path).map_err(|e| FryError::io(&path, e))?;
    write_table(&rows, file)?;
    for r in &rows {
        run.log(&format!(
            "{:<20} seed {:>3}: test mIoU {:.2} cls {:.2} mean MAE {:.3}",
            r.variant, r.seed, r.test.miou, r.test.cls_acc, r.test.mean_mae
        ));
    }
    Ok(())
}

pub fn probe(checkpoint: &Path, out: &Path, data: Option<&Path>) -> Result<()> {
    let (ck, model, ds) = restore(checkpoint, data)?;
    let mut run = RunDir::create(out, "probe")?;
    run.lock_config(&ck.config)?;
    let acc = probe_audit(&model, &ck.store, &ds, ck.config.seed)?;
    let path = run.metrics("probe.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["checkpoint_iter", "n_domains", "probe_acc_pct"]).map_err(csv_err(&path))?;
    w.write_record([ck.iteration.to_string(), ck.domain_ids.len().to_string(), format!("{acc:.6}")])
        .map_err(csv_err(&path))?;
    w.flush().map_err(|e| FryError::io(&path, e))?;
    run.log(&format!("video-id probe accuracy {acc:.2}% over {} train videos", ck.domain_ids.len()));
    Ok(())
}
