//! Run configuration: one TOML document with nested sections, built from a
//! preset, an optional file and dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::adversarial::{DaMethod, DannConfig};
use crate::error::{FryError, Result};
use crate::fusion::{FusionConfig, FusionMethod};
use crate::heads_losses::LossWeights;
use crate::rgb_mae_encoder::EncoderConfig;
use crate::synthdata::SynthConfig;
use crate::thermal_backbone::{check_input_size, BackboneConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub encoder: EncoderConfig,
    pub fusion: FusionConfig,
    pub dann: DannConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub resize: [f64; 2],
    pub hflip: bool,
    /// Brightness, contrast and saturation jitter on rgb only.
    pub jitter: f64,
    pub crop: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            resize: [0.5, 2.0],
            hflip: true,
            jitter: 0.1,
            crop: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            resize: [1.0, 1.0],
            hflip: false,
            jitter: 0.0,
            crop: false,
        }
    }
}

/// Which parts of the model and objective are active.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    pub enable_rgb: bool,
    pub fused_regression: bool,
    pub enable_mae: bool,
    pub enable_chem: bool,
    pub enable_thermal_dann: bool,
    pub enable_rgb_dann: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self {
            name: "full".into(),
            enable_rgb: true,
            fused_regression: true,
            enable_mae: true,
            enable_chem: true,
            enable_thermal_dann: true,
            enable_rgb_dann: true,
        }
    }
}

/// The in-scope ablation rows, in table order.
pub const ABLATION_GRID: [&str; 11] = [
    "thermal_only",
    "thermal_dann",
    "rgb_dual_dann",
    "full",
    "minus_thermal_dann",
    "minus_chem",
    "minus_all_dann",
    "mmd",
    "coral",
    "concat",
    "no_mae",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_iters: usize,
    pub warmup_iters: usize,
    pub power: f64,
    pub bn_momentum: f64,
    /// Validation cadence as a fraction of `total_iters`.
    pub eval_fraction: f64,
    pub augment: AugmentConfig,
    pub variant: Variant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            weight_decay: 1e-2,
            batch_size: 4,
            total_iters: 2000,
            warmup_iters: 150,
            power: 1.0,
            bn_momentum: 0.1,
            eval_fraction: 0.1,
            augment: AugmentConfig::default(),
            variant: Variant::default(),
        }
    }
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            base_lr: 6e-5,
            total_iters: 40_000,
            warmup_iters: 1500,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub videos: SynthConfig,
    pub model: ModelConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Preset::Toy.config()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Toy,
    PaperShape,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "paper-shape" => Ok(Self::PaperShape),
            other => Err(FryError::Config(format!("unknown preset {other:?} (toy, paper-shape)"))),
        }
    }

    pub fn config(self) -> RunConfig {
        match self {
            Preset::Toy => RunConfig {
                seed: 0,
                videos: SynthConfig::default(),
                model: ModelConfig::default(),
                loss: LossWeights::default(),
                train: TrainConfig::default(),
            },
            Preset::PaperShape => RunConfig {
                seed: 0,
                videos: SynthConfig {
                    image_size: [512, 512],
                    ..SynthConfig::default()
                },
                model: ModelConfig {
                    backbone: BackboneConfig::paper(),
                    encoder: EncoderConfig::paper(),
                    fusion: FusionConfig::paper(),
                    dann: DannConfig::paper(),
                },
                loss: LossWeights::default(),
                train: TrainConfig::paper(),
            },
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.videos.validate()?;
        self.model.backbone.validate()?;
        self.model.encoder.validate()?;
        self.model.fusion.validate()?;
        self.model.dann.validate()?;
        self.loss.validate()?;
        let [h, w] = self.videos.image_size;
        check_input_size(h, w).map_err(|e| FryError::Config(e.to_string()))?;
        self.model.encoder.grid(h, w).map_err(|e| FryError::Config(e.to_string()))?;
        let t = &self.train;
        if t.warmup_iters >= t.total_iters {
            return Err(FryError::Config(format!(
                "warmup_iters {} must be below total_iters {}",
                t.warmup_iters, t.total_iters
            )));
        }
        if t.batch_size == 0 || !(t.base_lr > 0.0) || t.weight_decay < 0.0 || t.power <= 0.0 {
            return Err(FryError::Config("train needs positive batch_size, base_lr and power".into()));
        }
        if !(t.eval_fraction > 0.0 && t.eval_fraction <= 1.0) {
            return Err(FryError::Config("eval_fraction must lie in (0, 1]".into()));
        }
        let [lo, hi] = t.augment.resize;
        if !(lo > 0.0 && lo <= hi) {
            return Err(FryError::Config("augment.resize must be an increasing positive range".into()));
        }
        let distributional = matches!(self.model.dann.method, DaMethod::Mmd | DaMethod::Coral);
        if distributional && t.batch_size < 2 && self.any_domain_loss() {
            return Err(FryError::Config("mmd/coral need batches from at least two videos".into()));
        }
        Ok(())
    }

    pub fn any_domain_loss(&self) -> bool {
        let v = &self.train.variant;
        self.model.dann.method != DaMethod::None && (v.enable_thermal_dann || (v.enable_rgb && v.enable_rgb_dann))
    }

    /// Reconfigures this run as one of the [`ABLATION_GRID`] rows.
    pub fn apply_variant(&mut self, name: &str) -> Result<()> {
        let full = Variant::default();
        let mut method = DaMethod::Grl;
        let mut fusion = FusionMethod::Film;
        let v = match name {
            "full" => full,
            "thermal_only" => Variant {
                enable_rgb: false,
                fused_regression: false,
                enable_mae: false,
                enable_chem: false,
                enable_thermal_dann: false,
                enable_rgb_dann: false,
                ..full
            },
            "thermal_dann" => Variant {
                enable_rgb: false,
                fused_regression: false,
                enable_mae: false,
                enable_chem: false,
                enable_rgb_dann: false,
                ..full
            },
            "rgb_dual_dann" => Variant {
                fused_regression: false,
                ..full
            },
            "minus_thermal_dann" => Variant {
                enable_thermal_dann: false,
                ..full
            },
            "minus_chem" => Variant {
                enable_chem: false,
                ..full
            },
            "minus_all_dann" => Variant {
                enable_thermal_dann: false,
                enable_rgb_dann: false,
                ..full
            },
            "mmd" => {
                method = DaMethod::Mmd;
                full
            }
            "coral" => {
                method = DaMethod::Coral;
                full
            }
            "concat" => {
                fusion = FusionMethod::Concat;
                Variant {
                    fused_regression: false,
                    ..full
                }
            }
            "no_mae" => Variant {
                fused_regression: false,
                enable_mae: false,
                ..full
            },
            other => {
                return Err(FryError::Config(format!(
                    "unknown variant {other:?}; expected one of {ABLATION_GRID:?}"
                )))
            }
        };
        self.train.variant = Variant {
            name: name.to_string(),
            ..v
        };
        self.model.dann.method = method;
        self.model.fusion.method = fusion;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FryError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Preset, then the file (if any) merged over it, then overrides.
    pub fn resolve(preset: Preset, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = Value::try_from(preset.config()).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| FryError::io(path, e))?;
            let layer: Value = toml::from_str(&text).map_err(|e| FryError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, layer);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = tree.try_into().map_err(|e: toml::de::Error| FryError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Table(b), Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| FryError::Config(format!("override {spec:?} is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    let mut node = tree;
    for (i, part) in path.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| FryError::Config(format!("override {key}: {part} is not a section")))?;
        if i + 1 == path.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(toml::Table::new()));
    }
    Err(FryError::Config(format!("empty override key in {spec:?}")))
}
