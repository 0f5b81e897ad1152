//! SVG charts derived purely from a run directory's metrics CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fryshort_core::synthdata::Target;
use fryshort_core::{FryError, Result};
use plotters::prelude::*;

use crate::output::csv_err;

const SIZE: (u32, u32) = (900, 520);

fn draw_err<E: std::fmt::Debug>(e: E) -> FryError {
    FryError::Format(format!("plot rendering failed: {e:?}"))
}

/// Header plus rows of one CSV file.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(FryError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "metrics CSV not found"),
            ));
        }
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err(path))?;
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parsed values of a column, skipping blank cells.
    fn series(&self, x: usize, y: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.get(x)?.parse().ok()?, r.get(y)?.parse().ok()?)))
            .collect()
    }
}

fn line_chart(title: &str, x_desc: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<String> {
    let points = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
            .map_err(draw_err)?;
        chart.configure_mesh().x_desc(x_desc).draw().map_err(draw_err)?;
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(draw_err)?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

fn bar_chart(title: &str, bars: &[(String, f64)]) -> Result<String> {
    let top = bars.iter().map(|(_, v)| *v).fold(0.0, f64::max).max(1e-6) * 1.15;
    let names: Vec<String> = bars.iter().map(|(n, _)| n.clone()).collect();
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE).map_err(draw_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d((0..bars.len()).into_segmented(), 0.0..top)
            .map_err(draw_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .y_desc("MAE (raw units)")
            .x_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) => names.get(*i).cloned().unwrap_or_default(),
                _ => String::new(),
            })
            .draw()
            .map_err(draw_err)?;
        chart
            .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
                let color = Palette99::pick(i).filled();
                let mut rect = Rectangle::new([(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), *v)], color);
                rect.set_margin(0, 0, 18, 18);
                rect
            }))
            .map_err(draw_err)?;
        root.present().map_err(draw_err)?;
    }
    Ok(svg)
}

/// Per-target MAE bars from a metrics table's last row.
fn mae_bars(table: &Table, source: &Path) -> Result<Vec<(String, f64)>> {
    let row = table
        .rows
        .last()
        .ok_or_else(|| FryError::Format(format!("{} has no rows", source.display())))?;
    Target::ALL
        .iter()
        .map(|t| {
            let col = format!("mae_{}", t.name());
            table
                .column(&col)
                .and_then(|i| row.get(i)?.parse().ok())
                .map(|v| (t.name().to_string(), v))
                .ok_or_else(|| FryError::Format(format!("{} lacks a numeric {col}", source.display())))
        })
        .collect()
}

/// Renders every chart in memory first; files are written only when all of
/// them succeed.
pub fn plot_run(run: &Path) -> Result<()> {
    let metrics = run.join("metrics");
    let mut charts: BTreeMap<PathBuf, String> = BTreeMap::new();

    let curves_path = metrics.join("curves.csv");
    let curves = Table::read(&curves_path)?;
    if curves.rows.is_empty() {
        return Err(FryError::Format(format!("{} has no rows", curves_path.display())));
    }
    let iter = curves.column("iter").ok_or_else(|| FryError::Format("curves.csv lacks iter".into()))?;
    let losses: Vec<(String, Vec<(f64, f64)>)> = curves
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| *h == "total" || h.starts_with("loss_"))
        .map(|(i, h)| (h.trim_start_matches("loss_").to_string(), curves.series(iter, i)))
        .filter(|(_, s)| !s.is_empty())
        .collect();
    charts.insert(run.join("plots/loss_curves.svg"), line_chart("Training losses", "iteration", &losses)?);

    let val_path = metrics.join("val.csv");
    let val = val_path.is_file().then(|| Table::read(&val_path)).transpose()?;
    if let Some(val) = &val {
        if let Some(x) = val.column("iter") {
            let series: Vec<_> = ["miou_pct", "mf1_pct", "cls_acc_pct"]
                .iter()
                .filter_map(|&c| Some((c.trim_end_matches("_pct").to_string(), val.series(x, val.column(c)?))))
                .filter(|(_, s)| !s.is_empty())
                .collect();
            if !series.is_empty() {
                charts.insert(run.join("plots/val_metrics.svg"), line_chart("Validation metrics (%)", "iteration", &series)?);
            }
        }
    }

    let mut evals: Vec<PathBuf> = std::fs::read_dir(&metrics)
        .map_err(|e| FryError::io(&metrics, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eval_") && n.ends_with(".csv"))
        })
        .collect();
    evals.sort();
    for path in &evals {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
        let split = stem.trim_start_matches("eval_");
        let bars = mae_bars(&Table::read(path)?, path)?;
        charts.insert(
            run.join(format!("plots/mae_{split}.svg")),
            bar_chart(&format!("Per-target MAE, {split} split"), &bars)?,
        );
    }
    if evals.is_empty() {
        match &val {
            Some(val) => {
                let bars = mae_bars(val, &val_path)?;
                charts.insert(run.join("plots/mae_val.svg"), bar_chart("Per-target MAE, last validation", &bars)?);
            }
            None => {
                return Err(FryError::io(
                    &metrics,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no eval_*.csv or val.csv for MAE bars"),
                ))
            }
        }
    }

    let plots = run.join("plots");
    std::fs::create_dir_all(&plots).map_err(|e| FryError::io(&plots, e))?;
    for (path, svg) in charts {
        std::fs::write(&path, svg).map_err(|e| FryError::io(&path, e))?;
    }
    Ok(())
}
