//! Pixel confusion matrices and the derived segmentation, classification
//! and regression metrics.

use serde::{Deserialize, Serialize};

use crate::heads_losses::NUM_CLASSES;
use crate::synthdata::Target;

/// `counts[gt][pred]` pixel counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Confusion {
    pub fn add(&mut self, gt: &[u8], pred: &[u8]) {
        assert_eq!(gt.len(), pred.len(), "label maps differ in size");
        for (&g, &p) in gt.iter().zip(pred) {
            self.counts[g as usize][p as usize] += 1;
        }
    }

    pub fn merge(mut self, other: &Confusion) -> Self {
        for g in 0..NUM_CLASSES {
            for p in 0..NUM_CLASSES {
                self.counts[g][p] += other.counts[g][p];
            }
        }
        self
    }

    /// `(tp, fp, fn)` for class `c`.
    pub fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.counts[c][c];
        let fp: u64 = (0..NUM_CLASSES).filter(|&g| g != c).map(|g| self.counts[g][c]).sum();
        let fneg: u64 = (0..NUM_CLASSES).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        (tp, fp, fneg)
    }

    /// Per-class IoU; `None` for classes absent from both maps.
    pub fn iou(&self) -> [Option<f64>; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let (tp, fp, fneg) = self.tp_fp_fn(c);
            let denom = tp + fp + fneg;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
    }

    pub fn f1(&self) -> [Option<f64>; NUM_CLASSES] {
        std::array::from_fn(|c| {
            let (tp, fp, fneg) = self.tp_fp_fn(c);
            let denom = 2 * tp + fp + fneg;
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
    }

    pub fn miou(&self) -> f64 {
        mean_present(&self.iou())
    }

    pub fn mf1(&self) -> f64 {
        mean_present(&self.f1())
    }
}

fn mean_present(v: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = v.iter().flatten().copied().collect();
    if present.is_empty() {
        return 0.0;
    }
    present.iter().sum::<f64>() / present.len() as f64
}

/// Evaluation summary. Segmentation and accuracy figures are percentages;
/// MAE is in raw chemical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n_frames: usize,
    pub iou: [Option<f64>; NUM_CLASSES],
    pub f1: [Option<f64>; NUM_CLASSES],
    pub miou: f64,
    pub mf1: f64,
    pub cls_acc: f64,
    /// Indexed like [`Target::ALL`].
    pub mae: [f64; 4],
    pub mean_mae: f64,
    pub probe_acc: Option<f64>,
}

impl MetricsReport {
    pub fn from_parts(split: &str, conf: &Confusion, correct: usize, n_frames: usize, abs_err: [f64; 4]) -> Self {
        let pct = |v: [Option<f64>; NUM_CLASSES]| v.map(|x| x.map(|x| 100.0 * x));
        let mae = abs_err.map(|e| if n_frames > 0 { e / n_frames as f64 } else { 0.0 });
        Self {
            split: split.to_string(),
            n_frames,
            iou: pct(conf.iou()),
            f1: pct(conf.f1()),
            miou: 100.0 * conf.miou(),
            mf1: 100.0 * conf.mf1(),
            cls_acc: if n_frames > 0 {
                100.0 * correct as f64 / n_frames as f64
            } else {
                0.0
            },
            mae,
            mean_mae: mae.iter().sum::<f64>() / 4.0,
            probe_acc: None,
        }
    }

    /// CSV column names, in [`MetricsReport::csv_row`] order.
    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = ["split", "n_frames", "miou_pct", "mf1_pct", "cls_acc_pct"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for c in ["background", "good", "replace"] {
            h.push(format!("iou_{c}_pct"));
        }
        for c in ["background", "good", "replace"] {
            h.push(format!("f1_{c}_pct"));
        }
        for t in Target::ALL {
            h.push(format!("mae_{}", t.name()));
        }
        h.push("mean_mae".into());
        h.push("probe_acc_pct".into());
        h
    }

    pub fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let mut r = vec![
            self.split.clone(),
            self.n_frames.to_string(),
            format!("{:.6}", self.miou),
            format!("{:.6}", self.mf1),
            format!("{:.6}", self.cls_acc),
        ];
        r.extend(self.iou.iter().map(|&v| opt(v)));
        r.extend(self.f1.iter().map(|&v| opt(v)));
        r.extend(self.mae.iter().map(|v| format!("{v:.6}")));
        r.push(format!("{:.6}", self.mean_mae));
        r.push(opt(self.probe_acc));
        r
    }
}
