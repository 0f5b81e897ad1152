//! Pyramid collapse to a single stride-4 map, then RGB conditioning by FiLM
//! or by plain concatenation.

use fryshort_autograd::{ConvSpec, ParamId, Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{FryError, Result};
use crate::nn::{BatchNorm, Builder, Conv2d, Ctx, GroupNorm, Init, Linear};
use crate::thermal_backbone::FeaturePyramid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Film,
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub unified_channels: usize,
    pub method: FusionMethod,
    pub film_alpha_init: f64,
    pub gate_bias_init: f64,
    pub group_norm_groups: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            unified_channels: 64,
            method: FusionMethod::Film,
            film_alpha_init: 0.0,
            gate_bias_init: 4.0,
            group_norm_groups: 8,
        }
    }
}

impl FusionConfig {
    pub fn paper() -> Self {
        Self {
            unified_channels: 256,
            group_norm_groups: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, g) = (self.unified_channels, self.group_norm_groups);
        if c == 0 || g == 0 || c % g != 0 {
            return Err(FryError::Config(format!("group_norm_groups {g} must divide unified_channels {c}")));
        }
        if c < 4 {
            return Err(FryError::Config("unified_channels must be at least 4".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MultiScaleFuse {
    proj: Vec<(Conv2d, BatchNorm)>,
    reduce: Conv2d,
}

impl MultiScaleFuse {
    pub fn new<T: Real>(b: &mut Builder<T>, stage_channels: &[usize; 4], c: usize) -> Self {
        let proj = stage_channels
            .iter()
            .enumerate()
            .map(|(i, &ci)| {
                let name = format!("fusion.ms.proj{}", i + 1);
                (
                    Conv2d::new(b, &name, ci, c, 1, ConvSpec::new(1, 0), false, Init::KaimingOut),
                    BatchNorm::new(b, &format!("{name}.bn"), c),
                )
            })
            .collect();
        Self {
            proj,
            reduce: Conv2d::new(b, "fusion.ms.reduce", 4 * c, c, 1, ConvSpec::new(1, 0), true, Init::KaimingOut),
        }
    }

    /// `F_ms: [N, C, H/4, W/4]`.
    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, p: &FeaturePyramid<'g, T>) -> Var<'g, T> {
        let (h, w) = (p.f1().dim(2), p.f1().dim(3));
        let parts: Vec<Var<'g, T>> = self
            .proj
            .iter()
            .zip(p.levels.iter())
            .map(|((conv, bn), &f)| bn.forward(cx, conv.forward(cx, f)).resize_bilinear(h, w))
            .collect();
        self.reduce.forward(cx, cx.g.concat(&parts, 1))
    }
}

/// Feature-wise modulation of `F_ms` by the rgb context map.
#[derive(Debug, Clone)]
pub struct FilmFuse {
    pub gb1: Linear,
    pub gb2: Linear,
    pub gate: Conv2d,
    pub alpha: ParamId,
    pub norm: GroupNorm,
    pub channels: usize,
}

/// Intermediate tensors of one FiLM pass, exposed for inspection.
#[derive(Clone, Copy)]
pub struct FilmParts<'g, T: Real> {
    pub gamma: Var<'g, T>,
    pub beta: Var<'g, T>,
    pub gate: Var<'g, T>,
    pub out: Var<'g, T>,
}

impl FilmFuse {
    pub fn new<T: Real>(b: &mut Builder<T>, cfg: &FusionConfig, ctx_dim: usize) -> Self {
        let c = cfg.unified_channels;
        Self {
            gb1: Linear::new(b, "fusion.film.gb1", ctx_dim, c / 4, Init::FanIn),
            gb2: Linear::zeros(b, "fusion.film.gb2", c / 4, 2 * c),
            gate: Conv2d::new(
                b,
                "fusion.film.gate",
                ctx_dim,
                1,
                1,
                ConvSpec::new(1, 0),
                true,
                Init::Constant(0.0),
            ),
            alpha: b.param("fusion.film.alpha", &[1], Init::Constant(cfg.film_alpha_init), 1, 1),
            norm: GroupNorm::new(b, "fusion.film.gn", cfg.group_norm_groups, c),
            channels: c,
        }
        .with_gate_bias(b, cfg.gate_bias_init)
    }

    fn with_gate_bias<T: Real>(self, b: &mut Builder<T>, bias: f64) -> Self {
        let id = self.gate.b.expect("gate conv has a bias");
        b.store.set(id, fryshort_autograd::Tensor::from_f64([1], &[bias]));
        self
    }

    pub fn forward_parts<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        f_ms: Var<'g, T>,
        s_ctx: Var<'g, T>,
    ) -> Result<FilmParts<'g, T>> {
        let (n, c) = (f_ms.dim(0), self.channels);
        if f_ms.dim(1) != c {
            return Err(FryError::Shape(format!("F_ms has {} channels, expected {c}", f_ms.dim(1))));
        }
        let (h, w) = (f_ms.dim(2), f_ms.dim(3));
        let (gh, gw) = (s_ctx.dim(2), s_ctx.dim(3));
        if gh > h || gw > w {
            return Err(FryError::Config(format!(
                "context grid {gh}x{gw} is finer than F_ms grid {h}x{w}"
            )));
        }
        let down = f_ms.resize_bilinear(gh, gw);
        let gb = self.gb2.forward(cx, self.gb1.forward(cx, s_ctx.gap()).relu());
        let gamma = gb.narrow(1, 0, c).reshape([n, c, 1, 1]);
        let beta = gb.narrow(1, c, c).reshape([n, c, 1, 1]);
        let m = down.add(down.mul(gamma)).add(beta);
        let gate = self.gate.forward(cx, s_ctx).sigmoid();
        // alpha * m * g + (1 - alpha) * down, written so alpha = 0 is exact
        let blend = down.add(cx.p(self.alpha).mul(m.mul(gate).sub(down)));
        let out = self.norm.forward(cx, blend).resize_bilinear(h, w);
        Ok(FilmParts { gamma, beta, gate, out })
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, f_ms: Var<'g, T>, s_ctx: Var<'g, T>) -> Result<Var<'g, T>> {
        Ok(self.forward_parts(cx, f_ms, s_ctx)?.out)
    }
}

/// Upsampled context concatenated onto `F_ms` and reduced back to C.
#[derive(Debug, Clone)]
pub struct ConcatFuse {
    pub reduce: Conv2d,
    pub norm: GroupNorm,
}

impl ConcatFuse {
    pub fn new<T: Real>(b: &mut Builder<T>, cfg: &FusionConfig, ctx_dim: usize) -> Self {
        let c = cfg.unified_channels;
        Self {
            reduce: Conv2d::new(
                b,
                "fusion.concat.reduce",
                c + ctx_dim,
                c,
                1,
                ConvSpec::new(1, 0),
                true,
                Init::KaimingOut,
            ),
            norm: GroupNorm::new(b, "fusion.concat.gn", cfg.group_norm_groups, c),
        }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, f_ms: Var<'g, T>, s_ctx: Var<'g, T>) -> Result<Var<'g, T>> {
        let (h, w) = (f_ms.dim(2), f_ms.dim(3));
        let up = s_ctx.resize_bilinear(h, w);
        Ok(self.norm.forward(cx, self.reduce.forward(cx, cx.g.concat(&[f_ms, up], 1))))
    }
}

#[derive(Debug, Clone)]
pub enum Conditioner {
    Film(FilmFuse),
    Concat(ConcatFuse),
}

impl Conditioner {
    pub fn new<T: Real>(b: &mut Builder<T>, cfg: &FusionConfig, ctx_dim: usize) -> Self {
        match cfg.method {
            FusionMethod::Film => Self::Film(FilmFuse::new(b, cfg, ctx_dim)),
            FusionMethod::Concat => Self::Concat(ConcatFuse::new(b, cfg, ctx_dim)),
        }
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, f_ms: Var<'g, T>, s_ctx: Var<'g, T>) -> Result<Var<'g, T>> {
        match self {
            Self::Film(f) => f.forward(cx, f_ms, s_ctx),
            Self::Concat(f) => f.forward(cx, f_ms, s_ctx),
        }
    }
}
