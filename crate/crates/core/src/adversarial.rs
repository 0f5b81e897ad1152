//! Video-identity adversaries: reversed-gradient classifier heads, and the
//! MMD / CORAL distribution-matching alternatives.

use fryshort_autograd::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{FryError, Result};
use crate::nn::{dropout, BatchNorm, Builder, Ctx, Init, Linear};
use crate::synthdata::{DatasetManifest, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaMethod {
    Grl,
    Mmd,
    Coral,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DannConfig {
    pub method: DaMethod,
    pub grl_alpha: f64,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for DannConfig {
    fn default() -> Self {
        Self {
            method: DaMethod::Grl,
            grl_alpha: 1.0,
            hidden: 64,
            dropout: 0.5,
        }
    }
}

impl DannConfig {
    pub fn paper() -> Self {
        Self {
            hidden: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !(0.0..1.0).contains(&self.dropout) || self.grl_alpha < 0.0 {
            return Err(FryError::Config(format!("invalid dann settings {self:?}")));
        }
        Ok(())
    }
}

/// Maps train-split video ids to domain labels `0..n_domains`. Any other
/// video is a contract violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainIndex {
    ids: Vec<usize>,
}

impl DomainIndex {
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        Self {
            ids: m.train_domain_ids(),
        }
    }

    pub fn from_ids(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn domain_of(&self, video_id: usize) -> Result<usize> {
        self.ids.iter().position(|&v| v == video_id).ok_or_else(|| {
            FryError::Contract(format!(
                "video {video_id} is not a {} video and may not reach a domain loss",
                Split::Train.name()
            ))
        })
    }

    pub fn domains_of(&self, video_ids: &[usize]) -> Result<Vec<usize>> {
        video_ids.iter().map(|&v| self.domain_of(v)).collect()
    }
}

/// `Linear -> BN -> ReLU -> Dropout -> Linear` over `n_domains` classes.
#[derive(Debug, Clone)]
pub struct DannHead {
    pub fc1: Linear,
    pub bn: BatchNorm,
    pub fc2: Linear,
    pub dropout: f64,
    pub alpha: f64,
}

impl DannHead {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, input_dim: usize, n_domains: usize, cfg: &DannConfig) -> Self {
        Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), input_dim, cfg.hidden, Init::FanIn),
            bn: BatchNorm::new(b, &format!("{name}.bn"), cfg.hidden),
            fc2: Linear::new(b, &format!("{name}.fc2"), cfg.hidden, n_domains, Init::FanIn),
            dropout: cfg.dropout,
            alpha: cfg.grl_alpha,
        }
    }

    /// Domain logits for already-reversed features.
    pub fn logits<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let h = self.bn.forward_batch_stats(cx, self.fc1.forward(cx, x)).relu();
        self.fc2.forward(cx, dropout(cx, h, self.dropout))
    }

    /// Cross-entropy of the head on `grl(features)`. `domains` come from a
    /// [`DomainIndex`], so held-out frames cannot get here.
    pub fn loss<'g, T: Real>(&self, cx: &Ctx<'g, T>, features: Var<'g, T>, domains: &[usize]) -> Var<'g, T> {
        self.logits(cx, features.grl(T::lit(self.alpha))).cross_entropy(domains)
    }
}

/// Indices of each distinct group, in order of first appearance.
pub fn partition(groups: &[usize]) -> Vec<Vec<usize>> {
    let mut keys: Vec<usize> = Vec::new();
    let mut parts: Vec<Vec<usize>> = Vec::new();
    for (i, &g) in groups.iter().enumerate() {
        match keys.iter().position(|&k| k == g) {
            Some(j) => parts[j].push(i),
            None => {
                keys.push(g);
                parts.push(vec![i]);
            }
        }
    }
    parts
}

/// A distribution-matching loss and whether the batch held fewer than two
/// groups (in which case the value is a constant zero).
pub struct DaLoss<'g, T: Real> {
    pub value: Var<'g, T>,
    pub single_group: bool,
}

fn zero<T: Real>(g: &Graph<T>) -> Var<'_, T> {
    g.constant(Tensor::scalar(T::zero()))
}

/// Median of pairwise Euclidean distances between rows; 1 when degenerate.
pub fn median_bandwidth<T: Real>(x: &Tensor<T>) -> f64 {
    let (n, d) = (x.dim(0), x.dim(1));
    let v = x.to_f64_vec();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let s: f64 = (0..d).map(|k| (v[i * d + k] - v[j * d + k]).powi(2)).sum();
            dists.push(s.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// RBF-kernel MMD^2 averaged over unordered group pairs, biased
/// (V-statistic) estimator: non-negative and exactly zero for identical
/// groups. `bandwidth` defaults to the median heuristic.
pub fn mmd_loss<'g, T: Real>(x: Var<'g, T>, groups: &[usize], bandwidth: Option<f64>) -> DaLoss<'g, T> {
    let parts = partition(groups);
    let g = x.graph();
    if parts.len() < 2 {
        return DaLoss {
            value: zero(g),
            single_group: true,
        };
    }
    let n = x.dim(0);
    let sigma = bandwidth.unwrap_or_else(|| median_bandwidth(&x.value()));
    // kernel-matrix weights summed over all pairs of groups
    let mut w = vec![0.0f64; n * n];
    let within = |w: &mut [f64], idx: &[usize], scale: f64| {
        let m = idx.len() as f64;
        for &i in idx {
            for &j in idx {
                w[i * n + j] += scale / (m * m);
            }
        }
    };
    let pairs = parts.len() * (parts.len() - 1) / 2;
    let per_pair = 1.0 / pairs as f64;
    for a in 0..parts.len() {
        for b in a + 1..parts.len() {
            within(&mut w, &parts[a], per_pair);
            within(&mut w, &parts[b], per_pair);
            let cross = -2.0 * per_pair / (parts[a].len() * parts[b].len()) as f64;
            for &i in &parts[a] {
                for &j in &parts[b] {
                    w[i * n + j] += cross;
                }
            }
        }
    }
    let sq = x.sqr().sum_axis(1, true);
    let d2 = sq.add(sq.reshape([1, n])).sub(x.matmul_nt(x).scale(T::lit(2.0)));
    let k = d2.scale(T::lit(-0.5 / (sigma * sigma))).exp();
    DaLoss {
        value: k.mul_const(&Tensor::from_f64([n, n], &w)).sum_all(),
        single_group: false,
    }
}

fn covariance<'g, T: Real>(x: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
    let n = x.dim(0);
    let mu = x.mean_axis(0, true);
    let xc = x.sub(mu);
    (xc.transpose(0, 1).matmul(xc).scale(T::lit(1.0 / n as f64)), mu)
}

/// Per group: `||C_g - C_all||_F^2 / (4 d^2) + mean((mu_g - mu_all)^2)`,
/// with population covariances, averaged over groups.
pub fn coral_loss<'g, T: Real>(x: Var<'g, T>, groups: &[usize]) -> DaLoss<'g, T> {
    let parts = partition(groups);
    let g = x.graph();
    if parts.len() < 2 {
        return DaLoss {
            value: zero(g),
            single_group: true,
        };
    }
    let d = x.dim(1) as f64;
    let (c_all, mu_all) = covariance(x);
    let mut total = zero(g);
    for idx in &parts {
        let (c, mu) = covariance(x.index_select(0, idx));
        let cov_term = c.sub(c_all).sqr().sum_all().scale(T::lit(1.0 / (4.0 * d * d)));
        let mean_term = mu.sub(mu_all).sqr().mean_all();
        total = total.add(cov_term).add(mean_term);
    }
    DaLoss {
        value: total.scale(T::lit(1.0 / parts.len() as f64)),
        single_group: false,
    }
}
