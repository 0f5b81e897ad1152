//! Frame synthesis. A frame is a clean scene (an elliptical oil region whose
//! thermal texture and RGB colour encode the oxidation state) passed through
//! the video's simulated sensors.

use rand::Rng;
use rand_distr::StandardNormal;

use super::fingerprint::CameraFingerprint;
use super::manifest::{DatasetManifest, VideoSpec};
use crate::error::{FryError, Result};
use crate::seed::{self, Stream};

/// Co-registered thermal/RGB frame with its label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub height: usize,
    pub width: usize,
    /// `H*W`, values in `[0, 1]`.
    pub thermal: Vec<f32>,
    /// Planar `3*H*W` (all red, then green, then blue), values in `[0, 1]`.
    pub rgb: Vec<f32>,
    /// `H*W` labels: 0 background, 1 good, 2 replace.
    pub mask: Vec<u8>,
    pub video_id: usize,
    pub frame_idx: usize,
}

/// Oil-region ellipse in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    pub cx: f64,
    pub cy: f64,
    pub ax: f64,
    pub ay: f64,
}

const CENTER: f64 = 0.5;
const AXIS_X: f64 = 0.31;
const AXIS_Y: f64 = 0.27;
/// Geometry jitter as a fraction of the image size.
const JITTER: f64 = 0.05;

impl FrameGeometry {
    pub fn sample(scene_seed: u64, frame_idx: usize, [h, w]: [usize; 2]) -> Self {
        let mut rng = seed::rng_at(scene_seed, Stream::Scene, frame_idx as u64);
        let mut j = || rng.gen_range(-JITTER..JITTER);
        let (h, w) = (h as f64, w as f64);
        Self {
            cx: w * (CENTER + j()),
            cy: h * (CENTER + j()),
            ax: w * (AXIS_X + j()),
            ay: h * (AXIS_Y + j()),
        }
    }

    /// Pixel centres inside the ellipse are oil.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let u = (x as f64 + 0.5 - self.cx) / self.ax;
        let v = (y as f64 + 0.5 - self.cy) / self.ay;
        u * u + v * v <= 1.0
    }
}

/// Oxidation level in `[0, 1]` that drives the clean appearance.
pub fn oxidation(totox: f64) -> f64 {
    ((totox - 5.0) / 75.0).clamp(0.0, 1.0)
}

/// Spatial frequency (cycles per image) of the thermal oxidation texture.
pub fn texture_frequency(totox: f64) -> f64 {
    3.0 + 9.0 * oxidation(totox)
}

/// Relative contrast of the thermal oxidation texture.
pub fn texture_contrast(totox: f64) -> f64 {
    0.3 + 0.7 * oxidation(totox)
}

const THERMAL_BACKGROUND: f64 = 0.12;
const RGB_BACKGROUND: [f64; 3] = [0.42, 0.42, 0.45];
const FRESH_OIL: [f64; 3] = [0.93, 0.84, 0.42];
const SPENT_OIL: [f64; 3] = [0.50, 0.30, 0.10];
const FOAM: [f64; 3] = [0.96, 0.94, 0.88];
/// Foam speckle cell size in pixels.
const FOAM_CELL: f64 = 3.0;

fn oil_thermal(temp_f: f64) -> f64 {
    0.30 + 0.015 * (temp_f - 100.0)
}

fn foam_density(p_av: f64) -> f64 {
    0.02 + 0.3 * (p_av / 60.0).min(1.0)
}

/// Renders one frame with an explicit geometry.
pub fn render_with_geometry(
    spec: &VideoSpec,
    frame_idx: usize,
    [h, w]: [usize; 2],
    texture_amplitude: f64,
    geom: FrameGeometry,
) -> FramePair {
    let fp: &CameraFingerprint = &spec.fingerprint;
    let chem = &spec.chem;
    let label = chem.class().label();
    let ox = oxidation(chem.totox);
    let freq = texture_frequency(chem.totox);
    let contrast = texture_contrast(chem.totox);
    let oil_t = oil_thermal(chem.temp_f);
    let oil_rgb: [f64; 3] = std::array::from_fn(|c| FRESH_OIL[c] + ox * (SPENT_OIL[c] - FRESH_OIL[c]));
    let foam = foam_density(chem.p_av);
    let (fh, fw) = (h as f64, w as f64);
    let corner_r2 = (fw / 2.0).powi(2) + (fh / 2.0).powi(2);

    // Fixed-pattern noise is constant across the video's frames.
    let mut fpn_rng = seed::rng(fp.seed, Stream::FixedPattern);
    let col_offsets: Vec<f64> = (0..w)
        .map(|_| fpn_rng.sample::<f64, _>(StandardNormal) * 0.5)
        .collect();
    let mut noise_rng = seed::rng_at(fp.seed, Stream::RgbNoise, frame_idx as u64);

    let n = h * w;
    let mut thermal = vec![0f32; n];
    let mut rgb = vec![0f32; 3 * n];
    let mut mask = vec![0u8; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let oil = geom.contains(x, y);
            let (clean_t, clean_rgb) = if oil {
                mask[i] = label;
                let u = (x as f64 + 0.5 - geom.cx) / fw;
                let v = (y as f64 + 0.5 - geom.cy) / fh;
                let phase = std::f64::consts::TAU * freq * (0.8 * u + 0.6 * v);
                let t = oil_t + texture_amplitude * contrast * phase.sin();
                let cell = seed::mix_all(&[
                    ((x as f64 + 0.5 - geom.cx) / FOAM_CELL).floor() as i64 as u64,
                    ((y as f64 + 0.5 - geom.cy) / FOAM_CELL).floor() as i64 as u64,
                ]);
                let c = if seed::unit(cell) < foam { FOAM } else { oil_rgb };
                (t, c)
            } else {
                let shade = 0.05 * ((y as f64 + 0.5) / fh - 0.5);
                (THERMAL_BACKGROUND, RGB_BACKGROUND.map(|c| c + shade))
            };
            let dx = x as f64 + 0.5 - fw / 2.0;
            let dy = y as f64 + 0.5 - fh / 2.0;
            let vignette = 1.0 - fp.vignette_strength * (dx * dx + dy * dy) / corner_r2;
            let fpn = fp.fpn_amplitude * (fpn_rng.sample::<f64, _>(StandardNormal) + col_offsets[x]);
            thermal[i] = (clean_t * vignette + fpn + fp.thermal_bias).clamp(0.0, 1.0) as f32;
            for c in 0..3 {
                let noise = if fp.rgb_noise_sigma > 0.0 {
                    fp.rgb_noise_sigma * noise_rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                rgb[c * n + i] = (fp.wb_gain[c] * clean_rgb[c] + noise).clamp(0.0, 1.0) as f32;
            }
        }
    }
    FramePair {
        height: h,
        width: w,
        thermal,
        rgb,
        mask,
        video_id: spec.video_id,
        frame_idx,
    }
}

pub fn render_frame(
    spec: &VideoSpec,
    frame_idx: usize,
    image_size: [usize; 2],
    texture_amplitude: f64,
) -> Result<FramePair> {
    if frame_idx >= spec.n_frames {
        return Err(FryError::Validation(format!(
            "frame {frame_idx} out of range for video {} with {} frames",
            spec.video_id, spec.n_frames
        )));
    }
    let geom = FrameGeometry::sample(spec.scene_seed, frame_idx, image_size);
    Ok(render_with_geometry(spec, frame_idx, image_size, texture_amplitude, geom))
}

impl DatasetManifest {
    pub fn render_frame(&self, video_id: usize, frame_idx: usize) -> Result<FramePair> {
        let spec = self
            .video(video_id)
            .ok_or_else(|| FryError::Validation(format!("unknown video {video_id}")))?;
        render_frame(spec, frame_idx, self.image_size, self.texture_amplitude)
    }
}

/// Storage precision of the on-disk format.
pub fn quantize_thermal(x: f32) -> f32 {
    ((x as f64 * 65535.0).round() / 65535.0) as f32
}

pub fn quantize_u8(x: f32) -> f32 {
    ((x as f64 * 255.0).round() / 255.0) as f32
}

impl FramePair {
    /// Rounds pixel values to the precision the dataset files store.
    pub fn quantized(mut self) -> Self {
        self.thermal.iter_mut().for_each(|v| *v = quantize_thermal(*v));
        self.rgb.iter_mut().for_each(|v| *v = quantize_u8(*v));
        self
    }

    pub fn oil_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }
}
