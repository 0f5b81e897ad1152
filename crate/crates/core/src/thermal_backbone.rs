//! Four-stage overlapping-patch transformer over the thermal image, with
//! channel (TCA) and spatial (TSA) attention after every stage.

use fryshort_autograd::{ConvSpec, Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{FryError, Result};
use crate::nn::{Attention, Builder, Conv2d, Ctx, Init, LayerNorm, Linear};

pub const STRIDES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub attention_enabled: bool,
    pub head_dim: usize,
    /// Key/value spatial reduction per stage.
    pub sr_ratios: [usize; 4],
    pub mlp_ratio: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_channels: [16, 32, 48, 64],
            stage_depths: [2, 2, 2, 2],
            attention_enabled: true,
            head_dim: 16,
            sr_ratios: [4, 2, 1, 1],
            mlp_ratio: 4,
        }
    }
}

impl BackboneConfig {
    pub fn paper() -> Self {
        Self {
            stage_channels: [64, 128, 320, 512],
            stage_depths: [3, 4, 6, 3],
            attention_enabled: true,
            head_dim: 64,
            sr_ratios: [8, 4, 2, 1],
            mlp_ratio: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, (&c, &d)) in self.stage_channels.iter().zip(&self.stage_depths).enumerate() {
            if c == 0 || d == 0 {
                return Err(FryError::Config(format!("backbone stage {i} needs positive channels and depth")));
            }
            if c % self.head_dim != 0 {
                return Err(FryError::Config(format!(
                    "stage {i} channels {c} not divisible by head_dim {}",
                    self.head_dim
                )));
            }
            if self.sr_ratios[i] == 0 {
                return Err(FryError::Config(format!("stage {i} sr ratio must be positive")));
            }
        }
        Ok(())
    }
}

pub fn check_input_size(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
        return Err(FryError::Shape(format!("input {h}x{w} must be a positive multiple of 32")));
    }
    Ok(())
}

/// Stage outputs `[N, C_i, H/s_i, W/s_i]` for strides 4, 8, 16, 32.
#[derive(Clone, Copy)]
pub struct FeaturePyramid<'g, T: Real> {
    pub levels: [Var<'g, T>; 4],
}

impl<'g, T: Real> FeaturePyramid<'g, T> {
    pub fn f1(&self) -> Var<'g, T> {
        self.levels[0]
    }

    pub fn f4(&self) -> Var<'g, T> {
        self.levels[3]
    }
}

/// Channel gate from pooled descriptors through a shared bottleneck.
#[derive(Debug, Clone)]
pub struct Tca {
    pub fc1: Linear,
    pub fc2: Linear,
    pub scale: fryshort_autograd::ParamId,
}

impl Tca {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str, channels: usize) -> Self {
        let hidden = (channels / 16).max(4);
        Self {
            fc1: Linear::new(b, &format!("{name}.fc1"), channels, hidden, Init::FanIn),
            fc2: Linear::new(b, &format!("{name}.fc2"), hidden, channels, Init::FanIn),
            scale: b.param(&format!("{name}.scale"), &[1], Init::Constant(0.0), 1, 1),
        }
    }

    /// Per-channel gate `[N, C]` in (0, 1).
    pub fn gate<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let mlp = |v: Var<'g, T>| self.fc2.forward(cx, self.fc1.forward(cx, v).relu());
        mlp(x.gap()).add(mlp(x.gmp())).sigmoid()
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let s = x.shape();
        let a = self.gate(cx, x).reshape([s[0], s[1], 1, 1]);
        residual_blend(cx, x, a, self.scale)
    }
}

/// Spatial gate from channel mean and max through a 7x7 convolution.
#[derive(Debug, Clone)]
pub struct Tsa {
    pub conv: Conv2d,
    pub scale: fryshort_autograd::ParamId,
}

impl Tsa {
    pub fn new<T: Real>(b: &mut Builder<T>, name: &str) -> Self {
        Self {
            conv: Conv2d::new(b, &format!("{name}.conv"), 2, 1, 7, ConvSpec::new(1, 3), true, Init::FanIn),
            scale: b.param(&format!("{name}.scale"), &[1], Init::Constant(0.0), 1, 1),
        }
    }

    /// Spatial gate `[N, 1, H, W]` in (0, 1).
    pub fn gate<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let desc = cx.g.concat(&[x.mean_axis(1, true), x.max_axis(1, true)], 1);
        self.conv.forward(cx, desc).sigmoid()
    }

    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let a = self.gate(cx, x);
        residual_blend(cx, x, a, self.scale)
    }
}

/// `x + s * (a * x - x)`: exactly `x` while the scalar `s` is zero.
fn residual_blend<'g, T: Real>(
    cx: &Ctx<'g, T>,
    x: Var<'g, T>,
    a: Var<'g, T>,
    s: fryshort_autograd::ParamId,
) -> Var<'g, T> {
    x.add(cx.p(s).mul(a.mul(x).sub(x)))
}

#[derive(Debug, Clone)]
struct MixFfn {
    fc1: Linear,
    dw: Conv2d,
    fc2: Linear,
}

#[derive(Debug, Clone)]
struct Block {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    ffn: MixFfn,
}

impl Block {
    fn new<T: Real>(b: &mut Builder<T>, name: &str, dim: usize, heads: usize, sr: usize, mlp_ratio: usize) -> Self {
        let hidden = dim * mlp_ratio;
        let init = Init::TruncNormal(0.02);
        Self {
            norm1: LayerNorm::new(b, &format!("{name}.norm1"), dim),
            attn: Attention::new(b, &format!("{name}.attn"), dim, heads, sr),
            norm2: LayerNorm::new(b, &format!("{name}.norm2"), dim),
            ffn: MixFfn {
                fc1: Linear::new(b, &format!("{name}.ffn.fc1"), dim, hidden, init),
                dw: Conv2d::new(
                    b,
                    &format!("{name}.ffn.dwconv"),
                    hidden,
                    hidden,
                    3,
                    ConvSpec::grouped(1, 1, hidden),
                    true,
                    Init::KaimingOut,
                ),
                fc2: Linear::new(b, &format!("{name}.ffn.fc2"), hidden, dim, init),
            },
        }
    }

    fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, x: Var<'g, T>, grid: (usize, usize)) -> Var<'g, T> {
        let x = x.add(self.attn.forward(cx, self.norm1.forward(cx, x), grid));
        let h = self.ffn.fc1.forward(cx, self.norm2.forward(cx, x));
        let h = self.ffn.dw.forward(cx, h.from_tokens(grid.0, grid.1)).to_tokens().gelu();
        x.add(self.ffn.fc2.forward(cx, h))
    }
}

#[derive(Debug, Clone)]
struct Stage {
    embed: Conv2d,
    embed_norm: LayerNorm,
    blocks: Vec<Block>,
    norm: LayerNorm,
    tca: Option<Tca>,
    tsa: Option<Tsa>,
}

#[derive(Debug, Clone)]
pub struct ThermalBackbone {
    pub config: BackboneConfig,
    stages: Vec<Stage>,
}

impl ThermalBackbone {
    pub fn new<T: Real>(b: &mut Builder<T>, config: &BackboneConfig) -> Result<Self> {
        config.validate()?;
        let mut cin = 1;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let c = config.stage_channels[i];
            let name = format!("backbone.stage{}", i + 1);
            let (k, spec) = if i == 0 {
                (7, ConvSpec::new(4, 3))
            } else {
                (3, ConvSpec::new(2, 1))
            };
            let blocks = (0..config.stage_depths[i])
                .map(|j| {
                    Block::new(
                        b,
                        &format!("{name}.block{j}"),
                        c,
                        c / config.head_dim,
                        config.sr_ratios[i],
                        config.mlp_ratio,
                    )
                })
                .collect();
            stages.push(Stage {
                embed: Conv2d::new(b, &format!("{name}.patch_embed"), cin, c, k, spec, true, Init::KaimingOut),
                embed_norm: LayerNorm::new(b, &format!("{name}.patch_norm"), c),
                blocks,
                norm: LayerNorm::new(b, &format!("{name}.norm"), c),
                tca: config.attention_enabled.then(|| Tca::new(b, &format!("{name}.tca"), c)),
                tsa: config.attention_enabled.then(|| Tsa::new(b, &format!("{name}.tsa"))),
            });
            cin = c;
        }
        Ok(Self {
            config: config.clone(),
            stages,
        })
    }

    /// `thermal: [N, 1, H, W]` with H and W multiples of 32.
    pub fn forward<'g, T: Real>(&self, cx: &Ctx<'g, T>, thermal: Var<'g, T>) -> Result<FeaturePyramid<'g, T>> {
        let s = thermal.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(FryError::Shape(format!("thermal input must be [N, 1, H, W], got {s:?}")));
        }
        check_input_size(s[2], s[3])?;
        let mut x = thermal;
        let mut levels = Vec::with_capacity(4);
        for st in &self.stages {
            let m = st.embed.forward(cx, x);
            let (h, w) = (m.dim(2), m.dim(3));
            let mut t = st.embed_norm.forward(cx, m.to_tokens());
            for blk in &st.blocks {
                t = blk.forward(cx, t, (h, w));
            }
            let mut f = st.norm.forward(cx, t).from_tokens(h, w);
            if let Some(tca) = &st.tca {
                f = tca.forward(cx, f);
            }
            if let Some(tsa) = &st.tsa {
                f = tsa.forward(cx, f);
            }
            levels.push(f);
            x = f;
        }
        Ok(FeaturePyramid {
            levels: [levels[0], levels[1], levels[2], levels[3]],
        })
    }

    pub fn tca(&self, stage: usize) -> Option<&Tca> {
        self.stages[stage].tca.as_ref()
    }

    pub fn tsa(&self, stage: usize) -> Option<&Tsa> {
        self.stages[stage].tsa.as_ref()
    }
}
