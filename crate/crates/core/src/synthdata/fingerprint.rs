use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed::{self, Stream};

/// Ranges from which per-video sensor nuisances are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FingerprintBounds {
    pub fpn_amplitude: [f64; 2],
    pub vignette_strength: [f64; 2],
    /// Thermal bias magnitude as a fraction of its maximum
    /// (`shortcut_strength * texture_amplitude`).
    pub bias_fraction: [f64; 2],
    pub wb_gain: [f64; 2],
    pub rgb_noise_sigma: [f64; 2],
}

impl Default for FingerprintBounds {
    fn default() -> Self {
        Self {
            fpn_amplitude: [0.004, 0.012],
            vignette_strength: [0.0, 0.12],
            bias_fraction: [0.5, 1.0],
            wb_gain: [0.97, 1.03],
            rgb_noise_sigma: [0.005, 0.02],
        }
    }
}

/// Deterministic per-video sensor signature; every field is a function of
/// `seed` and the generator bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraFingerprint {
    pub seed: u64,
    pub fpn_amplitude: f64,
    pub vignette_strength: f64,
    pub thermal_bias: f64,
    pub wb_gain: [f64; 3],
    pub rgb_noise_sigma: f64,
}

fn draw(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

impl CameraFingerprint {
    /// `bias_scale` is the largest thermal bias magnitude.
    pub fn from_seed(seed: u64, bounds: &FingerprintBounds, bias_scale: f64) -> Self {
        let mut rng = seed::rng(seed, Stream::Fingerprint);
        let fpn_amplitude = draw(&mut rng, bounds.fpn_amplitude);
        let vignette_strength = draw(&mut rng, bounds.vignette_strength);
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let thermal_bias = sign * draw(&mut rng, bounds.bias_fraction) * bias_scale;
        let wb_gain = [
            draw(&mut rng, bounds.wb_gain),
            draw(&mut rng, bounds.wb_gain),
            draw(&mut rng, bounds.wb_gain),
        ];
        let rgb_noise_sigma = draw(&mut rng, bounds.rgb_noise_sigma);
        Self {
            seed,
            fpn_amplitude,
            vignette_strength,
            thermal_bias,
            wb_gain,
            rgb_noise_sigma,
        }
    }

    /// A sensor with no nuisance at all.
    pub fn zeroed(seed: u64) -> Self {
        Self {
            seed,
            fpn_amplitude: 0.0,
            vignette_strength: 0.0,
            thermal_bias: 0.0,
            wb_gain: [1.0; 3],
            rgb_noise_sigma: 0.0,
        }
    }

    pub fn polarity(&self) -> i8 {
        if self.thermal_bias >= 0.0 {
            1
        } else {
            -1
        }
    }

    pub fn within(&self, bounds: &FingerprintBounds, bias_scale: f64) -> bool {
        let inside = |v: f64, [lo, hi]: [f64; 2]| v >= lo && v <= hi;
        let b = self.thermal_bias.abs() / bias_scale.max(f64::MIN_POSITIVE);
        inside(self.fpn_amplitude, bounds.fpn_amplitude)
            && inside(self.vignette_strength, bounds.vignette_strength)
            && (bias_scale == 0.0 || inside(b, bounds.bias_fraction))
            && self.wb_gain.iter().all(|&g| inside(g, bounds.wb_gain))
            && inside(self.rgb_noise_sigma, bounds.rgb_noise_sigma)
    }
}
