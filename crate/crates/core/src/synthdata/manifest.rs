use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chem::{ChemicalState, OilClass, Target};
use super::fingerprint::{CameraFingerprint, FingerprintBounds};
use crate::error::{FryError, Result};
use crate::seed::{self, Stream};

pub const SCHEMA_VERSION: u32 = 1;

/// Default split proportions: 20 train, 4 val, 4 test.
const REFERENCE_TOTAL: f64 = 28.0;
const REFERENCE_HELD_OUT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(FryError::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OilType {
    Corn,
    Canola,
}

/// Generator settings (the `[videos]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub total: usize,
    /// Explicit split sizes; when absent they follow the 20/4/4 proportions.
    pub train: Option<usize>,
    pub val: Option<usize>,
    pub test: Option<usize>,
    pub frames_per_video: usize,
    pub image_size: [usize; 2],
    /// Ratio of the thermal bias amplitude to the oxidation-texture amplitude.
    pub shortcut_strength: f64,
    /// Peak amplitude of the class-bearing thermal texture.
    pub texture_amplitude: f64,
    pub seed: u64,
    pub fingerprint: FingerprintBounds,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            total: 28,
            train: None,
            val: None,
            test: None,
            frames_per_video: 24,
            image_size: [64, 64],
            shortcut_strength: 3.0,
            texture_amplitude: 0.04,
            seed: 7,
            fingerprint: FingerprintBounds::default(),
        }
    }
}

impl SynthConfig {
    /// `(train, val, test)` video counts.
    pub fn split_counts(&self) -> Result<[usize; 3]> {
        let counts = match (self.train, self.val, self.test) {
            (Some(a), Some(b), Some(c)) => [a, b, c],
            (None, None, None) => {
                let held = ((self.total as f64 * REFERENCE_HELD_OUT / REFERENCE_TOTAL).round() as usize).max(1);
                [self.total.saturating_sub(2 * held), held, held]
            }
            _ => {
                return Err(FryError::Config(
                    "videos.train, videos.val and videos.test must be given together".into(),
                ))
            }
        };
        if counts.iter().any(|&c| c == 0) {
            return Err(FryError::Config(format!(
                "every split needs at least one video, got train/val/test = {counts:?}"
            )));
        }
        Ok(counts)
    }

    pub fn validate(&self) -> Result<()> {
        self.split_counts()?;
        if self.frames_per_video == 0 {
            return Err(FryError::Config("videos.frames_per_video must be positive".into()));
        }
        let [h, w] = self.image_size;
        if h == 0 || w == 0 {
            return Err(FryError::Config("videos.image_size must be positive".into()));
        }
        if !(self.shortcut_strength >= 0.0 && self.texture_amplitude >= 0.0) {
            return Err(FryError::Config("amplitudes must be non-negative".into()));
        }
        Ok(())
    }

    /// Largest thermal bias magnitude.
    pub fn bias_scale(&self) -> f64 {
        self.shortcut_strength * self.texture_amplitude
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSpec {
    pub video_id: usize,
    pub oil_type: OilType,
    pub split: Split,
    pub chem: ChemicalState,
    pub n_frames: usize,
    pub fingerprint: CameraFingerprint,
    /// Seeds the per-frame oil-region geometry.
    pub scene_seed: u64,
}

impl VideoSpec {
    pub fn class(&self) -> OilClass {
        self.chem.class()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub const STD_FLOOR: f64 = 1e-6;

/// Train-split z-score statistics for the four regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pv: MeanStd,
    pub p_av: MeanStd,
    pub totox: MeanStd,
    pub temp_f: MeanStd,
}

impl NormStats {
    pub fn get(&self, t: Target) -> MeanStd {
        match t {
            Target::Pv => self.pv,
            Target::PAv => self.p_av,
            Target::Totox => self.totox,
            Target::TempF => self.temp_f,
        }
    }

    pub fn normalize(&self, t: Target, x: f64) -> f64 {
        let s = self.get(t);
        (x - s.mean) / s.std
    }

    pub fn denormalize(&self, t: Target, z: f64) -> f64 {
        denormalize(z, self.get(t))
    }

    /// z-scored targets of a video in [`Target`] order.
    pub fn z_targets(&self, chem: &ChemicalState) -> [f64; 4] {
        let raw = chem.targets();
        std::array::from_fn(|i| self.normalize(Target::ALL[i], raw[i]))
    }
}

pub fn denormalize(z: f64, stats: MeanStd) -> f64 {
    z * stats.std + stats.mean
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator_seed: u64,
    pub image_size: [usize; 2],
    pub texture_amplitude: f64,
    pub videos: Vec<VideoSpec>,
    pub norm_stats: NormStats,
    /// SHA-256 of every frame file, keyed by path relative to the dataset root.
    #[serde(default)]
    pub checksums: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn video(&self, id: usize) -> Option<&VideoSpec> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn split_videos(&self, split: Split) -> Vec<&VideoSpec> {
        self.videos.iter().filter(|v| v.split == split).collect()
    }

    /// Ids of the train videos in domain-label order.
    pub fn train_domain_ids(&self) -> Vec<usize> {
        self.split_videos(Split::Train).iter().map(|v| v.video_id).collect()
    }

    /// SHA-256 of the canonical JSON encoding without the per-file
    /// checksums, so a loaded dataset and its regenerated twin agree.
    pub fn digest(&self) -> String {
        let mut bare = self.clone();
        bare.checksums.clear();
        let bytes = serde_json::to_vec(&bare).expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for v in &self.videos {
            if !seen.insert(v.video_id) {
                return Err(FryError::Contract(format!("duplicate video id {}", v.video_id)));
            }
            if !v.chem.totox_consistent() {
                return Err(FryError::Contract(format!("video {} breaks the Totox identity", v.video_id)));
            }
        }
        Ok(())
    }
}

pub fn compute_norm_stats(videos: &[VideoSpec]) -> Result<NormStats> {
    let train: Vec<&VideoSpec> = videos.iter().filter(|v| v.split == Split::Train).collect();
    if train.is_empty() {
        return Err(FryError::Validation("train split is empty".into()));
    }
    let n = train.len() as f64;
    let stat = |t: Target| {
        let xs: Vec<f64> = train.iter().map(|v| v.chem.targets()[t.index()]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd {
            mean,
            std: var.sqrt().max(STD_FLOOR),
        }
    };
    Ok(NormStats {
        pv: stat(Target::Pv),
        p_av: stat(Target::PAv),
        totox: stat(Target::Totox),
        temp_f: stat(Target::TempF),
    })
}

/// Totox ranges per class; the gap around the threshold keeps every video
/// unambiguous.
const GOOD_TOTOX: [f64; 2] = [5.8, 22.0];
const REPLACE_TOTOX: [f64; 2] = [30.0, 76.6];
const TEMP_F: [f64; 2] = [100.0, 130.0];

/// Thermal-bias polarity assigned to a video. In the train split it follows
/// the class, which is the planted shortcut; held-out splits use the
/// class-independent pattern `+ + - -`.
pub fn planned_polarity(split: Split, index_in_split: usize, class: OilClass) -> i8 {
    match split {
        Split::Train => match class {
            OilClass::Replace => 1,
            OilClass::Good => -1,
        },
        Split::Val | Split::Test => {
            if index_in_split % 4 < 2 {
                1
            } else {
                -1
            }
        }
    }
}

/// Draws fingerprint seeds from `(master_seed, video_id, attempt)` until the
/// bias polarity matches the plan.
fn fingerprint_for(cfg: &SynthConfig, video_id: usize, polarity: i8) -> CameraFingerprint {
    (0u64..)
        .map(|attempt| {
            let s = seed::mix_all(&[cfg.seed, video_id as u64, attempt]);
            CameraFingerprint::from_seed(s, &cfg.fingerprint, cfg.bias_scale())
        })
        .find(|fp| cfg.bias_scale() == 0.0 || fp.polarity() == polarity)
        .expect("a seed with either polarity exists")
}

pub fn sample_manifest(cfg: &SynthConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let counts = cfg.split_counts()?;
    let mut rng = seed::rng(cfg.seed, Stream::Manifest);
    let mut videos = Vec::with_capacity(counts.iter().sum());
    for (split, &count) in Split::ALL.iter().zip(&counts) {
        for i in 0..count {
            let video_id = videos.len();
            let class = if i % 2 == 0 { OilClass::Good } else { OilClass::Replace };
            let oil_type = if rng.gen_bool(0.5) { OilType::Corn } else { OilType::Canola };
            let [lo, hi] = match class {
                OilClass::Good => GOOD_TOTOX,
                OilClass::Replace => REPLACE_TOTOX,
            };
            let totox = rng.gen_range(lo..hi);
            // share of Totox carried by 2*PV
            let pv_share = match oil_type {
                OilType::Canola => rng.gen_range(0.15..0.35),
                OilType::Corn => rng.gen_range(0.30..0.50),
            };
            let pv = totox * pv_share / 2.0;
            let p_av = totox * (1.0 - pv_share);
            let temp_f = rng.gen_range(TEMP_F[0]..TEMP_F[1]);
            let chem = ChemicalState::new(pv, p_av, temp_f)?;
            debug_assert_eq!(chem.class(), class);
            let fingerprint = fingerprint_for(cfg, video_id, planned_polarity(*split, i, class));
            videos.push(VideoSpec {
                video_id,
                oil_type,
                split: *split,
                chem,
                n_frames: cfg.frames_per_video,
                fingerprint,
                scene_seed: seed::mix_all(&[cfg.seed, Stream::Scene as u64, video_id as u64]),
            });
        }
    }
    let norm_stats = compute_norm_stats(&videos)?;
    Ok(DatasetManifest {
        schema_version: SCHEMA_VERSION,
        generator_seed: cfg.seed,
        image_size: cfg.image_size,
        texture_amplitude: cfg.texture_amplitude,
        videos,
        norm_stats,
        checksums: BTreeMap::new(),
    })
}
