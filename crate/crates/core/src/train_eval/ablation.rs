//! One train + evaluate per grid row, emitted as a table.

use std::io::Write;

use fryshort_autograd::Exec;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::metrics::MetricsReport;
use super::probe::probe_audit;
use super::train::train;
use crate::config::RunConfig;
use crate::error::{FryError, Result};
use crate::synthdata::{Dataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub best_iter: usize,
    /// Test split, best-by-val checkpoint, with the probe filled in.
    pub test: MetricsReport,
}

/// Trains `base` reconfigured as each named variant, once per seed.
pub fn run_ablation(
    base: &RunConfig,
    ds: &Dataset,
    variants: &[String],
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len() * seeds.len());
    for name in variants {
        let mut cfg = base.clone();
        cfg.apply_variant(name)?;
        for &seed in seeds {
            cfg.seed = seed;
            let run = train(&cfg, ds, exec, None)?;
            let (mut test, _) = evaluate(&run.model, &run.best_store, ds, Split::Test, exec)?;
            test.probe_acc = Some(probe_audit(&run.model, &run.best_store, ds, seed)?);
            rows.push(AblationRow {
                variant: name.clone(),
                seed,
                best_iter: run.best_iter,
                test,
            });
        }
    }
    Ok(rows)
}

/// CSV table: variant, seed and best iteration ahead of the report columns.
pub fn write_table(rows: &[AblationRow], out: impl Write) -> Result<()> {
    let io = |e: csv::Error| FryError::Format(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["variant".to_string(), "seed".into(), "best_iter".into()];
    header.extend(MetricsReport::csv_header());
    w.write_record(&header).map_err(io)?;
    for r in rows {
        let mut rec = vec![r.variant.clone(), r.seed.to_string(), r.best_iter.to_string()];
        rec.extend(r.test.csv_row());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| FryError::Format(e.to_string()))?;
    Ok(())
}
