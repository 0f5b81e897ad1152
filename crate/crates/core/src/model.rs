//! Full dual-stream network: thermal backbone, optional rgb encoder and
//! conditioning, decode heads and domain adversaries.

use fryshort_autograd::{ParamStore, Real, Tensor, Var};

use crate::adversarial::{coral_loss, mmd_loss, DaMethod, DannHead, DomainIndex};
use crate::config::{RunConfig, Variant};
use crate::error::{FryError, Result};
use crate::fusion::{Conditioner, MultiScaleFuse};
use crate::heads_losses::{total_loss, AuxHead, LossParts, LossTerm, LossWeights, RegressionHeads, SegHead};
use crate::nn::{Builder, Ctx};
use crate::rgb_mae_encoder::{patchify, Encoded, MaskPlan, RgbMaeEncoder};
use crate::thermal_backbone::{FeaturePyramid, ThermalBackbone};

/// A minibatch of frames, already augmented.
#[derive(Debug, Clone)]
pub struct Batch<T: Real> {
    /// `[N, 1, H, W]`
    pub thermal: Tensor<T>,
    /// `[N, 3, H, W]`
    pub rgb: Tensor<T>,
    /// `N*H*W` labels in {0, 1, 2}.
    pub masks: Vec<usize>,
    pub video_ids: Vec<usize>,
    /// `[N, 4]` z-scored `[pv, p_av, totox, temp]`.
    pub targets_z: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.thermal.dim(2), self.thermal.dim(3))
    }
}

pub struct Outputs<'g, T: Real> {
    pub pyramid: FeaturePyramid<'g, T>,
    pub f_ms: Var<'g, T>,
    pub f_fused: Option<Var<'g, T>>,
    pub encoded: Option<Encoded<'g, T>>,
    /// `[N, 3, H, W]`
    pub seg_logits: Var<'g, T>,
    /// `[N, 3, H, W]`; training only.
    pub aux_logits: Option<Var<'g, T>>,
    /// `[N, 4]`
    pub reg_z: Var<'g, T>,
}

#[derive(Debug, Clone)]
pub struct FryNet {
    pub variant: Variant,
    pub da_method: DaMethod,
    pub backbone: ThermalBackbone,
    pub multiscale: MultiScaleFuse,
    pub encoder: Option<RgbMaeEncoder>,
    pub conditioner: Option<Conditioner>,
    pub seg: SegHead,
    pub aux: AuxHead,
    pub regression: RegressionHeads,
    pub thermal_dann: Option<DannHead>,
    pub rgb_dann: Option<DannHead>,
    pub domains: DomainIndex,
}

impl FryNet {
    /// Registers every parameter of the configured variant in `store`.
    /// Disabled components own no parameters.
    pub fn new<T: Real>(store: &mut ParamStore<T>, cfg: &RunConfig, domains: DomainIndex) -> Result<Self> {
        cfg.validate()?;
        let v = cfg.train.variant.clone();
        let m = &cfg.model;
        let c = m.fusion.unified_channels;
        let d = m.encoder.embed_dim;
        let mut b = Builder::new(store, cfg.seed);
        let backbone = ThermalBackbone::new(&mut b, &m.backbone)?;
        let multiscale = MultiScaleFuse::new(&mut b, &m.backbone.stage_channels, c);
        let (encoder, conditioner) = if v.enable_rgb {
            (
                Some(RgbMaeEncoder::new(&mut b, &m.encoder, cfg.videos.image_size)?),
                Some(Conditioner::new(&mut b, &m.fusion, d)),
            )
        } else {
            (None, None)
        };
        let seg = SegHead::new(&mut b, c);
        let aux = AuxHead::new(&mut b, m.backbone.stage_channels[0]);
        let regression = RegressionHeads::new(&mut b, c);
        let grl = m.dann.method == DaMethod::Grl;
        if cfg.any_domain_loss() && domains.len() < 2 {
            return Err(FryError::Config(format!(
                "domain losses need at least two training videos, got {}",
                domains.len()
            )));
        }
        let thermal_dann = (grl && v.enable_thermal_dann)
            .then(|| DannHead::new(&mut b, "dann.thermal", m.backbone.stage_channels[3], domains.len(), &m.dann));
        let rgb_dann = (grl && v.enable_rgb && v.enable_rgb_dann)
            .then(|| DannHead::new(&mut b, "dann.rgb", d, domains.len(), &m.dann));
        Ok(Self {
            variant: v,
            da_method: m.dann.method,
            backbone,
            multiscale,
            encoder,
            conditioner,
            seg,
            aux,
            regression,
            thermal_dann,
            rgb_dann,
            domains,
        })
    }

    pub fn uses_mae(&self) -> bool {
        self.encoder.is_some() && self.variant.enable_mae
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.encoder.as_ref().map(|e| e.config.patch_size)
    }

    pub fn n_tokens(&self) -> Option<usize> {
        self.encoder.as_ref().map(|e| e.n_tokens)
    }

    /// Forward pass. `plans` adds the joint thermal+rgb encoder pass that
    /// feeds the MAE and chemical losses; `s_ctx` always comes from the
    /// rgb-only pass.
    pub fn forward<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        thermal: &Tensor<T>,
        rgb: &Tensor<T>,
        plans: Option<&[MaskPlan]>,
    ) -> Result<Outputs<'g, T>> {
        let (h, w) = (thermal.dim(2), thermal.dim(3));
        let pyramid = self.backbone.forward(cx, cx.constant(thermal.clone()))?;
        let f_ms = self.multiscale.forward(cx, &pyramid);
        let (encoded, f_fused) = match (&self.encoder, &self.conditioner) {
            (Some(enc), Some(cond)) => {
                let rgb_v = cx.constant(rgb.clone());
                let e = match plans {
                    Some(plans) => {
                        let patches = patchify(thermal, enc.config.patch_size)?;
                        let mut e = enc.forward_train(cx, cx.constant(patches), rgb_v, plans)?;
                        // conditioning sees the same rgb-only context as inference
                        e.s_ctx = enc.context_features(cx, rgb_v)?.s_ctx;
                        e
                    }
                    None => enc.context_features(cx, rgb_v)?,
                };
                let fused = cond.forward(cx, f_ms, e.s_ctx)?;
                (Some(e), Some(fused))
            }
            _ => (None, None),
        };
        let seg_in = f_fused.unwrap_or(f_ms);
        let seg_logits = self.seg.forward(cx, seg_in, h, w);
        let aux_logits = cx.train().then(|| self.aux.forward(cx, pyramid.f1(), h, w));
        let reg_in = match f_fused {
            Some(f) if self.variant.fused_regression => f,
            _ => f_ms,
        };
        let reg_z = self.regression.forward(cx, reg_in);
        Ok(Outputs {
            pyramid,
            f_ms,
            f_fused,
            encoded,
            seg_logits,
            aux_logits,
            reg_z,
        })
    }

    /// Loss terms this model computes in training.
    pub fn active_terms(&self) -> Vec<LossTerm> {
        let mut t = vec![
            LossTerm::Seg,
            LossTerm::Aux,
            LossTerm::Totox,
            LossTerm::Pv,
            LossTerm::PAv,
            LossTerm::Temp,
        ];
        if self.encoder.is_some() {
            if self.variant.enable_mae {
                t.push(LossTerm::Mae);
            }
            if self.variant.enable_chem {
                t.push(LossTerm::Chem);
            }
        }
        if self.da_method != DaMethod::None {
            if self.variant.enable_thermal_dann {
                t.push(LossTerm::Dann);
            }
            if self.encoder.is_some() && self.variant.enable_rgb_dann {
                t.push(LossTerm::RgbDann);
            }
        }
        t
    }

    /// Every active loss term for one batch. Domain terms reject frames
    /// from held-out videos.
    pub fn loss_parts<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        batch: &Batch<T>,
        out: &Outputs<'g, T>,
        plans: Option<&[MaskPlan]>,
    ) -> Result<LossParts<'g, T>> {
        let active = self.active_terms();
        let mut parts = LossParts::default();
        parts.push(LossTerm::Seg, out.seg_logits.cross_entropy(&batch.masks));
        if let Some(aux) = out.aux_logits {
            parts.push(LossTerm::Aux, aux.cross_entropy(&batch.masks));
        }
        let n = batch.len();
        let reg_terms = [LossTerm::Pv, LossTerm::PAv, LossTerm::Totox, LossTerm::Temp];
        for (j, term) in reg_terms.into_iter().enumerate() {
            let target = column(&batch.targets_z, j);
            parts.push(term, out.reg_z.narrow(1, j, 1).reshape([n]).huber(&target, T::one()));
        }
        if let (Some(enc), Some(e)) = (&self.encoder, &out.encoded) {
            if active.contains(&LossTerm::Mae) {
                let plans = plans.ok_or_else(|| FryError::Contract("MAE loss needs mask plans".into()))?;
                let patches = patchify(&batch.thermal, enc.config.patch_size)?;
                parts.push(LossTerm::Mae, enc.mae_loss(cx, e.rgb_tokens, &patches, plans));
            }
            if active.contains(&LossTerm::Chem) {
                let chem_z = select_columns(&batch.targets_z, &[1, 2, 3]);
                parts.push(LossTerm::Chem, enc.chem_align(cx, e.rgb_tokens, &chem_z));
            }
        }
        let wants_domain = active.contains(&LossTerm::Dann) || active.contains(&LossTerm::RgbDann);
        if wants_domain {
            let domains = self.domains.domains_of(&batch.video_ids)?;
            if active.contains(&LossTerm::Dann) {
                let feat = out.pyramid.f4().gap();
                parts.push(LossTerm::Dann, self.domain_loss(cx, self.thermal_dann.as_ref(), feat, &domains)?);
            }
            if active.contains(&LossTerm::RgbDann) {
                let e = out.encoded.as_ref().expect("rgb stream active");
                let feat = e.s_ctx.gap();
                parts.push(LossTerm::RgbDann, self.domain_loss(cx, self.rgb_dann.as_ref(), feat, &domains)?);
            }
        }
        Ok(parts)
    }

    fn domain_loss<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        head: Option<&DannHead>,
        feat: Var<'g, T>,
        domains: &[usize],
    ) -> Result<Var<'g, T>> {
        Ok(match self.da_method {
            DaMethod::Grl => head.expect("grl head registered").loss(cx, feat, domains),
            DaMethod::Mmd => mmd_loss(feat, domains, None).value,
            DaMethod::Coral => coral_loss(feat, domains).value,
            DaMethod::None => unreachable!("no domain term is active without a method"),
        })
    }

    /// Weighted objective over the active terms; zero-weight terms are
    /// left out of the graph entirely.
    pub fn objective<'g, T: Real>(
        &self,
        cx: &Ctx<'g, T>,
        parts: &LossParts<'g, T>,
        weights: &LossWeights,
    ) -> Result<Var<'g, T>> {
        let kept = LossParts {
            parts: parts
                .parts
                .iter()
                .filter(|(t, _)| weights.get(*t) != 0.0)
                .copied()
                .collect(),
        };
        let active: Vec<LossTerm> = self
            .active_terms()
            .into_iter()
            .filter(|t| weights.get(*t) != 0.0)
            .collect();
        total_loss(cx.g, &kept, weights, &active)
    }
}

fn column<T: Real>(t: &Tensor<T>, j: usize) -> Tensor<T> {
    let (n, k) = (t.dim(0), t.dim(1));
    Tensor::from_vec([n], (0..n).map(|i| t.data()[i * k + j]).collect())
}

fn select_columns<T: Real>(t: &Tensor<T>, cols: &[usize]) -> Tensor<T> {
    let (n, k) = (t.dim(0), t.dim(1));
    let data = (0..n).flat_map(|i| cols.iter().map(move |&j| (i, j))).map(|(i, j)| t.data()[i * k + j]).collect();
    Tensor::from_vec([n, cols.len()], data)
}
