//! Segmentation, auxiliary and regression heads, majority-vote frame
//! classification and the weighted training objective.

use fryshort_autograd::{ConvSpec, Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{FryError, Result};
use crate::nn::{Builder, Conv2d, Ctx, Init, Linear};
use crate::synthdata::OilClass;

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Clone)]
pub struct SegHead {
    pub conv: Conv2d,
}

impl SegHead {
    pub fn new<T: Real>(b: &mut Builder<T>, c: usize) -> Self {
        Self {
            conv: Conv2d::new(b, "heads.seg", c, NUM_CLASSES, 1, ConvSpec::new(1, 0), true, Init::FanIn),
        }
    }

    /// Logits `[N, 3, h, w]` resized to the input resolution.
    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, f: Var<'g, T>, h: usize, w: usize) -> Var<'g, T> {
        self.conv.forward(cx, f).resize_bilinear(h, w)
    }
}

/// 3x3 conv, ReLU, 1x1 conv on the stride-4 backbone map.
#[derive(Debug, Clone)]
pub struct AuxHead {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl AuxHead {
    pub fn new<T: Real>(b: &mut Builder<T>, c1: usize) -> Self {
        Self {
            conv1: Conv2d::new(b, "heads.aux.conv1", c1, c1, 3, ConvSpec::new(1, 1), true, Init::KaimingOut),
            conv2: Conv2d::new(b, "heads.aux.conv2", c1, NUM_CLASSES, 1, ConvSpec::new(1, 0), true, Init::FanIn),
        }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, f1: Var<'g, T>, h: usize, w: usize) -> Var<'g, T> {
        self.conv2
            .forward(cx, self.conv1.forward(cx, f1).relu())
            .resize_bilinear(h, w)
    }
}

/// Four independent `C -> C -> 1` heads on stop-gradient pooled features.
/// Output columns follow [`crate::synthdata::Target::ALL`].
#[derive(Debug, Clone)]
pub struct RegressionHeads {
    pub heads: Vec<(Linear, Linear)>,
}

impl RegressionHeads {
    pub fn new<T: Real>(b: &mut Builder<T>, c: usize) -> Self {
        let names = ["pv", "p_av", "totox", "temp"];
        Self {
            heads: names
                .iter()
                .map(|n| {
                    (
                        Linear::new(b, &format!("heads.reg.{n}.fc1"), c, c, Init::FanIn),
                        Linear::new(b, &format!("heads.reg.{n}.fc2"), c, 1, Init::FanIn),
                    )
                })
                .collect(),
        }
    }

    /// z-scored predictions `[N, 4]` from a `[N, C, h, w]` map. No gradient
    /// reaches the map.
    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, f: Var<'g, T>) -> Var<'g, T> {
        let pooled = f.detach().gap();
        let cols: Vec<Var<'g, T>> = self
            .heads
            .iter()
            .map(|(a, b)| b.forward(cx, a.forward(cx, pooled).relu()))
            .collect();
        cx.g.concat(&cols, 1)
    }
}

/// Frame class from an argmax label map: the larger of good/replace among
/// non-background pixels. Ties and empty regions give replace.
pub fn majority_vote(labels: &[u8]) -> OilClass {
    let good = labels.iter().filter(|&&l| l == OilClass::Good.label()).count();
    let replace = labels.iter().filter(|&&l| l == OilClass::Replace.label()).count();
    if good > replace {
        OilClass::Good
    } else {
        OilClass::Replace
    }
}

/// Per-pixel argmax over the class axis of `[N, 3, H, W]` logits.
pub fn argmax_labels<T: Real>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let (n, k, inner) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * inner);
    for b in 0..n {
        for i in 0..inner {
            let mut best = 0;
            for c in 1..k {
                if d[(b * k + c) * inner + i] > d[(b * k + best) * inner + i] {
                    best = c;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    Seg,
    Aux,
    Totox,
    Pv,
    PAv,
    Temp,
    Mae,
    Chem,
    Dann,
    RgbDann,
}

impl LossTerm {
    pub const ALL: [LossTerm; 10] = [
        LossTerm::Seg,
        LossTerm::Aux,
        LossTerm::Totox,
        LossTerm::Pv,
        LossTerm::PAv,
        LossTerm::Temp,
        LossTerm::Mae,
        LossTerm::Chem,
        LossTerm::Dann,
        LossTerm::RgbDann,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossTerm::Seg => "seg",
            LossTerm::Aux => "aux",
            LossTerm::Totox => "totox",
            LossTerm::Pv => "pv",
            LossTerm::PAv => "p_av",
            LossTerm::Temp => "temp",
            LossTerm::Mae => "mae",
            LossTerm::Chem => "chem",
            LossTerm::Dann => "dann",
            LossTerm::RgbDann => "rgb_dann",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub seg: f64,
    pub aux: f64,
    pub totox: f64,
    pub pv: f64,
    pub p_av: f64,
    pub temp: f64,
    pub mae: f64,
    pub chem: f64,
    pub dann: f64,
    pub rgb_dann: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            seg: 0.1,
            aux: 0.4,
            totox: 1.0,
            pv: 0.5,
            p_av: 0.5,
            temp: 0.5,
            mae: 0.3,
            chem: 0.3,
            dann: 0.1,
            rgb_dann: 0.1,
        }
    }
}

impl LossWeights {
    pub fn get(&self, t: LossTerm) -> f64 {
        match t {
            LossTerm::Seg => self.seg,
            LossTerm::Aux => self.aux,
            LossTerm::Totox => self.totox,
            LossTerm::Pv => self.pv,
            LossTerm::PAv => self.p_av,
            LossTerm::Temp => self.temp,
            LossTerm::Mae => self.mae,
            LossTerm::Chem => self.chem,
            LossTerm::Dann => self.dann,
            LossTerm::RgbDann => self.rgb_dann,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in LossTerm::ALL {
            let w = self.get(t);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(FryError::Config(format!("loss weight {} = {w} must be non-negative", t.name())));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components of one step.
pub struct LossParts<'g, T: Real> {
    pub parts: Vec<(LossTerm, Var<'g, T>)>,
}

impl<'g, T: Real> Default for LossParts<'g, T> {
    fn default() -> Self {
        Self { parts: Vec::new() }
    }
}

impl<'g, T: Real> LossParts<'g, T> {
    pub fn push(&mut self, t: LossTerm, v: Var<'g, T>) {
        self.parts.push((t, v));
    }

    pub fn get(&self, t: LossTerm) -> Option<Var<'g, T>> {
        self.parts.iter().find(|(k, _)| *k == t).map(|(_, v)| *v)
    }

    pub fn values(&self) -> Vec<(LossTerm, f64)> {
        self.parts.iter().map(|(t, v)| (*t, v.item().to_f64().unwrap_or(f64::NAN))).collect()
    }
}

/// `sum_i w_i * L_i` over the present parts. Every term in `active` must
/// be present.
pub fn total_loss<'g, T: Real>(
    g: &'g Graph<T>,
    parts: &LossParts<'g, T>,
    weights: &LossWeights,
    active: &[LossTerm],
) -> Result<Var<'g, T>> {
    if let Some(t) = active.iter().find(|t| parts.get(**t).is_none()) {
        return Err(FryError::Contract(format!("active loss term {} was not computed", t.name())));
    }
    let mut total = g.constant(Tensor::scalar(T::zero()));
    for (t, v) in &parts.parts {
        total = total.add(v.scale(T::lit(weights.get(*t))));
    }
    Ok(total)
}

/// Scalar form of [`total_loss`].
pub fn weighted_sum(values: &[(LossTerm, f64)], weights: &LossWeights) -> f64 {
    values.iter().map(|(t, v)| weights.get(*t) * v).sum()
}
