//! Shared-token transformer over RGB patches and, during training, the
//! visible subset of thermal patches. Produces the dense context map used
//! by fusion plus the masked-reconstruction and chemical-alignment losses.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use fryshort_autograd::kernels;
use fryshort_autograd::{ParamId, Real, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FryError, Result};
use crate::nn::{Attention, Builder, Ctx, Init, LayerNorm, Linear, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub depth: usize,
    pub embed_dim: usize,
    pub patch_size: usize,
    pub mask_ratio: f64,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            embed_dim: 64,
            patch_size: 8,
            mask_ratio: 0.75,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

impl EncoderConfig {
    pub fn paper() -> Self {
        Self {
            embed_dim: 256,
            patch_size: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(FryError::Config(format!("mask_ratio {} outside (0, 1)", self.mask_ratio)));
        }
        if self.depth == 0 || self.patch_size == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(FryError::Config(format!(
                "encoder needs positive depth/patch size and embed_dim {} divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.embed_dim < 2 {
            return Err(FryError::Config("embed_dim must be at least 2".into()));
        }
        Ok(())
    }

    pub fn grid(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let p = self.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(FryError::Shape(format!("image {h}x{w} not divisible by patch size {p}")));
        }
        Ok((h / p, w / p))
    }
}

/// Masked and visible thermal-token indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked: Vec<usize>,
    pub visible: Vec<usize>,
}

impl MaskPlan {
    pub fn n_tokens(&self) -> usize {
        self.masked.len() + self.visible.len()
    }

    /// A plan that masks exactly `masked`.
    pub fn from_masked(n: usize, mut masked: Vec<usize>) -> Self {
        masked.sort_unstable();
        masked.dedup();
        let visible = (0..n).filter(|i| masked.binary_search(i).is_err()).collect();
        Self { masked, visible }
    }
}

pub fn masked_count(n_tokens: usize, ratio: f64) -> usize {
    (ratio * n_tokens as f64).floor() as usize
}

/// Uniform subset of `floor(ratio * n)` tokens without replacement.
pub fn sample_mask(n_tokens: usize, ratio: f64, rng: &mut impl Rng) -> MaskPlan {
    let k = masked_count(n_tokens, ratio);
    let masked = rand::seq::index::sample(rng, n_tokens, k).into_vec();
    MaskPlan::from_masked(n_tokens, masked)
}

/// `[N, C, H, W] -> [N, (H/p)(W/p), C*p*p]`, row-major patches, each
/// flattened channel-major.
pub fn patchify<T: Real>(x: &Tensor<T>, p: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(FryError::Shape(format!("image {h}x{w} not divisible by patch size {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    let t = kernels::permute(&x.reshape([n, c, gh, p, gw, p]), &[0, 2, 4, 1, 3, 5]);
    Ok(t.reshape([n, gh * gw, c * p * p]))
}

pub fn unpatchify<T: Real>(tokens: &Tensor<T>, c: usize, h: usize, w: usize, p: usize) -> Tensor<T> {
    let n = tokens.dim(0);
    let (gh, gw) = (h / p, w / p);
    let t = tokens.reshape([n, gh, gw, c, p, p]);
    kernels::permute(&t, &[0, 3, 1, 4, 2, 5]).reshape([n, c, h, w])
}

/// Differentiable [`patchify`].
pub fn patchify_var<'g, T: Real>(x: Var<'g, T>, p: usize) -> Result<Var<'g, T>> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(FryError::Shape(format!("image {h}x{w} not divisible by patch size {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    Ok(x.reshape([n, c, gh, p, gw, p])
        .permute(&[0, 2, 4, 1, 3, 5])
        .reshape([n, gh * gw, c * p * p]))
}

/// Row `(b, plan[b][j])` of a `[N, L, ...]` tensor for every sample `b`.
fn flat_rows(plans: &[MaskPlan], l: usize, pick: impl Fn(&MaskPlan) -> &[usize]) -> Vec<usize> {
    plans
        .iter()
        .enumerate()
        .flat_map(|(b, plan)| pick(plan).iter().map(move |&i| b * l + i))
        .collect()
}

fn pick_rows<'g, T: Real>(x: Var<'g, T>, rows: &[usize]) -> Var<'g, T> {
    let s = x.shape();
    let d = s[2];
    x.reshape([s[0] * s[1], d]).index_select(0, rows)
}

/// Call counter shared across clones of the encoder.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    fn hit(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone)]
struct EncBlock {
    norm1: LayerNorm,
    attn: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct PixelDecoder {
    pub mask_token: ParamId,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Debug, Clone)]
pub struct ChemHead {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Output of an encoder pass.
#[derive(Clone, Copy)]
pub struct Encoded<'g, T: Real> {
    /// Encoded rgb tokens `[N, L, D]`.
    pub rgb_tokens: Var<'g, T>,
    /// Encoded visible thermal tokens `[N, V, D]`; training path only.
    pub thermal_tokens: Option<Var<'g, T>>,
    /// `rgb_tokens` on the patch grid, `[N, D, H/p, W/p]`.
    pub s_ctx: Var<'g, T>,
}

#[derive(Debug, Clone)]
pub struct RgbMaeEncoder {
    pub config: EncoderConfig,
    pub n_tokens: usize,
    pub grid: (usize, usize),
    thermal_proj: Linear,
    rgb_proj: Linear,
    pub pos: ParamId,
    pub modality: ParamId,
    blocks: Vec<EncBlock>,
    norm: LayerNorm,
    pub decoder: PixelDecoder,
    pub chem: ChemHead,
    pub decoder_calls: CallCounter,
    pub chem_calls: CallCounter,
}

const THERMAL: usize = 0;
const RGB: usize = 1;

impl RgbMaeEncoder {
    pub fn new<T: Real>(b: &mut Builder<T>, config: &EncoderConfig, image_size: [usize; 2]) -> Result<Self> {
        config.validate()?;
        let grid = config.grid(image_size[0], image_size[1])?;
        let n_tokens = grid.0 * grid.1;
        let (d, p) = (config.embed_dim, config.patch_size);
        let init = Init::TruncNormal(0.02);
        let blocks = (0..config.depth)
            .map(|i| {
                let name = format!("encoder.block{i}");
                EncBlock {
                    norm1: LayerNorm::new(b, &format!("{name}.norm1"), d),
                    attn: Attention::new(b, &format!("{name}.attn"), d, config.heads, 1),
                    norm2: LayerNorm::new(b, &format!("{name}.norm2"), d),
                    mlp: Mlp::new(b, &format!("{name}.mlp"), d, d * config.mlp_ratio, d),
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            n_tokens,
            grid,
            thermal_proj: Linear::new(b, "encoder.thermal_proj", p * p, d, Init::FanIn),
            rgb_proj: Linear::new(b, "encoder.rgb_proj", 3 * p * p, d, Init::FanIn),
            pos: b.param("encoder.pos_embed", &[n_tokens, d], init, d, d),
            modality: b.param("encoder.modality_embed", &[2, d], init, d, d),
            blocks,
            norm: LayerNorm::new(b, "encoder.norm", d),
            decoder: PixelDecoder {
                mask_token: b.param("mae_decoder.mask_token", &[d], init, d, d),
                fc1: Linear::new(b, "mae_decoder.fc1", d, d / 2, init),
                fc2: Linear::new(b, "mae_decoder.fc2", d / 2, p * p, init),
            },
            chem: ChemHead {
                fc1: Linear::new(b, "chem_head.fc1", d, d / 2, init),
                fc2: Linear::new(b, "chem_head.fc2", d / 2, 3, init),
            },
            decoder_calls: CallCounter::default(),
            chem_calls: CallCounter::default(),
        })
    }

    fn modality_row<'g, T: Real>(&self, cx: &Ctx<'g, T>, which: usize) -> Var<'g, T> {
        cx.p(self.modality).narrow(0, which, 1)
    }

    fn check_tokens(&self, what: &str, l: usize) -> Result<()> {
        if l != self.n_tokens {
            return Err(FryError::Shape(format!(
                "{what} has {l} tokens, encoder grid has {}",
                self.n_tokens
            )));
        }
        Ok(())
    }

    /// rgb patches `[N, L, 3p^2]` plus positional and rgb-modality embeddings.
    pub fn embed_rgb<'g, T: Real>(&self, cx: &Ctx<'g, T>, patches: Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_tokens("rgb", patches.dim(1))?;
        Ok(self
            .rgb_proj
            .forward(cx, patches)
            .add(cx.p(self.pos))
            .add(self.modality_row(cx, RGB)))
    }

    /// Visible thermal patches gathered per sample, `[N, V, D]`.
    pub fn embed_thermal_visible<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        patches: Var<'g, T>,
        plans: &[MaskPlan],
    ) -> Result<Var<'g, T>> {
        let s = patches.shape();
        self.check_tokens("thermal", s[1])?;
        if plans.len() != s[0] {
            return Err(FryError::Shape(format!("{} mask plans for batch of {}", plans.len(), s[0])));
        }
        let v = plans[0].visible.len();
        if plans.iter().any(|p| p.visible.len() != v || p.n_tokens() != self.n_tokens) {
            return Err(FryError::Shape("mask plans disagree on token counts".into()));
        }
        let rows = flat_rows(plans, s[1], |p| &p.visible);
        let pos_idx: Vec<usize> = plans.iter().flat_map(|p| p.visible.iter().copied()).collect();
        let d = self.config.embed_dim;
        let tok = self.thermal_proj.forward(cx, pick_rows(patches, &rows));
        let pos = cx.p(self.pos).index_select(0, &pos_idx);
        Ok(tok
            .add(pos)
            .add(self.modality_row(cx, THERMAL))
            .reshape([s[0], v, d]))
    }

    /// Runs the shared blocks over already-embedded tokens.
    pub fn run_blocks<'g, T: Real>(&self, cx: &Ctx<'g, T>, mut x: Var<'g, T>) -> Var<'g, T> {
        for blk in &self.blocks {
            x = x.add(blk.attn.forward(cx, blk.norm1.forward(cx, x), (0, 0)));
            x = x.add(blk.mlp.forward(cx, blk.norm2.forward(cx, x)));
        }
        self.norm.forward(cx, x)
    }

    /// One pass over `[visible thermal; all rgb]`; output keeps that order.
    pub fn encode_joint<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        thermal_visible: Var<'g, T>,
        rgb: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        if thermal_visible.dim(0) != rgb.dim(0) || thermal_visible.dim(2) != rgb.dim(2) {
            return Err(FryError::Shape(format!(
                "thermal {:?} and rgb {:?} token sets disagree",
                thermal_visible.shape(),
                rgb.shape()
            )));
        }
        Ok(self.run_blocks(cx, cx.g.concat(&[thermal_visible, rgb], 1)))
    }

    fn to_grid<'g, T: Real>(&self, tokens: Var<'g, T>) -> Var<'g, T> {
        tokens.from_tokens(self.grid.0, self.grid.1)
    }

    /// Training path: thermal patches `[N, L, p^2]`, rgb image `[N, 3, H, W]`.
    pub fn forward_train<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        thermal_patches: Var<'g, T>,
        rgb: Var<'g, T>,
        plans: &[MaskPlan],
    ) -> Result<Encoded<'g, T>> {
        let th = self.embed_thermal_visible(cx, thermal_patches, plans)?;
        let rg = self.embed_rgb(cx, patchify_var(rgb, self.config.patch_size)?)?;
        let v = th.dim(1);
        let out = self.encode_joint(cx, th, rg)?;
        let rgb_tokens = out.narrow(1, v, self.n_tokens);
        Ok(Encoded {
            rgb_tokens,
            thermal_tokens: Some(out.narrow(1, 0, v)),
            s_ctx: self.to_grid(rgb_tokens),
        })
    }

    /// Inference path: rgb tokens only.
    pub fn context_features<'g, T: Real>(&self, cx: &Ctx<'g, T>, rgb: Var<'g, T>) -> Result<Encoded<'g, T>> {
        let rg = self.embed_rgb(cx, patchify_var(rgb, self.config.patch_size)?)?;
        let rgb_tokens = self.run_blocks(cx, rg);
        Ok(Encoded {
            rgb_tokens,
            thermal_tokens: None,
            s_ctx: self.to_grid(rgb_tokens),
        })
    }

    /// Pixel predictions `[N*M, p^2]` for the masked thermal positions,
    /// sample-major. Each decoder input is the encoded rgb token at the same
    /// grid cell plus the mask token and that cell's positional embedding.
    pub fn decode_masked<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        rgb_tokens: Var<'g, T>,
        plans: &[MaskPlan],
    ) -> Var<'g, T> {
        self.decoder_calls.hit();
        let rows = flat_rows(plans, self.n_tokens, |p| &p.masked);
        let pos_idx: Vec<usize> = plans.iter().flat_map(|p| p.masked.iter().copied()).collect();
        let x = pick_rows(rgb_tokens, &rows)
            .add(cx.p(self.pos).index_select(0, &pos_idx))
            .add(cx.p(self.decoder.mask_token));
        self.decoder.fc2.forward(cx, self.decoder.fc1.forward(cx, x).gelu())
    }

    /// L1 between decoded and original thermal patches, over masked tokens only.
    pub fn mae_loss<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        rgb_tokens: Var<'g, T>,
        thermal_patches: &Tensor<T>,
        plans: &[MaskPlan],
    ) -> Var<'g, T> {
        let pred = self.decode_masked(cx, rgb_tokens, plans);
        pred.l1(&masked_targets(thermal_patches, plans))
    }

    /// z-scored `[p_av, totox, temp]` predictions `[N, 3]` from pooled rgb tokens.
    pub fn chem_predict<'g, T: Real>(&self, cx: &Ctx<'g, T>, rgb_tokens: Var<'g, T>) -> Var<'g, T> {
        self.chem_calls.hit();
        let pooled = rgb_tokens.mean_axis(1, false);
        self.chem.fc2.forward(cx, self.chem.fc1.forward(cx, pooled).relu())
    }

    pub fn chem_align<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        rgb_tokens: Var<'g, T>,
        targets_z: &Tensor<T>,
    ) -> Var<'g, T> {
        self.chem_predict(cx, rgb_tokens).huber(targets_z, T::one())
    }
}

/// Original patch rows at masked positions, `[N*M, p^2]`, sample-major.
pub fn masked_targets<T: Real>(patches: &Tensor<T>, plans: &[MaskPlan]) -> Tensor<T> {
    let s = patches.shape();
    let (l, d) = (s[1], s[2]);
    let rows = flat_rows(plans, l, |p| &p.masked);
    kernels::index_select(&patches.reshape([s[0] * l, d]), 0, &rows)
}
