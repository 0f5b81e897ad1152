//! Minibatch sampling and training-time augmentation.

use fryshort_autograd::kernels::resize::resize_bilinear;
use fryshort_autograd::{Exec, Real, Tensor};
use rand::seq::index;
use rand::Rng;

use crate::config::AugmentConfig;
use crate::model::Batch;
use crate::synthdata::{Dataset, FramePair, Split};

/// One frame's pixels after augmentation, at the training size.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub thermal: Vec<f32>,
    pub rgb: Vec<f32>,
    pub mask: Vec<u8>,
    pub video_id: usize,
}

impl Sample {
    pub fn plain(f: &FramePair) -> Self {
        Self {
            thermal: f.thermal.clone(),
            rgb: f.rgb.clone(),
            mask: f.mask.clone(),
            video_id: f.video_id,
        }
    }
}

/// `(video_id, frame_idx)` pairs for one step: distinct training videos
/// while the batch fits, each with a uniformly drawn frame.
pub fn sample_keys(ds: &Dataset, batch: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let videos = ds.manifest.split_videos(Split::Train);
    let n = videos.len();
    let mut order: Vec<usize> = Vec::with_capacity(batch);
    while order.len() < batch {
        let take = (batch - order.len()).min(n);
        order.extend(index::sample(rng, n, take).into_iter());
    }
    order
        .into_iter()
        .map(|i| {
            let v = videos[i];
            (v.video_id, rng.gen_range(0..v.n_frames))
        })
        .collect()
}

fn resize_planes(data: &[f32], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    let t = Tensor::from_vec([1, c, h, w], data.to_vec());
    resize_bilinear(Exec::Sequential, &t, oh, ow).into_vec()
}

/// Nearest-neighbour resize on the corner-aligned grid used for images.
fn resize_labels(data: &[u8], h: usize, w: usize, oh: usize, ow: usize) -> Vec<u8> {
    let map = |o: usize, n_out: usize, n_in: usize| {
        if n_out <= 1 {
            0
        } else {
            ((o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64).round() as usize).min(n_in - 1)
        }
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let sy = map(y, oh, h);
        for x in 0..ow {
            out.push(data[sy * w + map(x, ow, w)]);
        }
    }
    out
}

/// Copies the `(h, w)` window at offset `(oy, ox)` of a `(sh, sw)` plane
/// stack; out-of-range pixels take `fill`.
#[allow(clippy::too_many_arguments)]
fn window<V: Copy>(src: &[V], c: usize, sh: usize, sw: usize, oy: isize, ox: isize, h: usize, w: usize, fill: V) -> Vec<V> {
    let mut out = vec![fill; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let sy = y as isize + oy;
            if sy < 0 || sy >= sh as isize {
                continue;
            }
            for x in 0..w {
                let sx = x as isize + ox;
                if sx >= 0 && sx < sw as isize {
                    out[(ch * h + y) * w + x] = src[(ch * sh + sy as usize) * sw + sx as usize];
                }
            }
        }
    }
    out
}

/// Random resize, crop or pad back to the frame size, horizontal flip, and
/// photometric jitter on rgb only.
pub fn augment(f: &FramePair, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let (h, w) = (f.height, f.width);
    let [lo, hi] = cfg.resize;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let (sh, sw) = (((h as f64 * scale).round() as usize).max(1), ((w as f64 * scale).round() as usize).max(1));
    let (mut th, mut rgb, mut mask) = if (sh, sw) == (h, w) {
        (f.thermal.clone(), f.rgb.clone(), f.mask.clone())
    } else {
        (
            resize_planes(&f.thermal, 1, h, w, sh, sw),
            resize_planes(&f.rgb, 3, h, w, sh, sw),
            resize_labels(&f.mask, h, w, sh, sw),
        )
    };
    if (sh, sw) != (h, w) {
        // larger: crop a window inside; smaller: place inside a zero canvas
        let offset = |s: usize, n: usize, rng: &mut dyn rand::RngCore| -> isize {
            if !cfg.crop {
                return (s as isize - n as isize) / 2;
            }
            if s >= n {
                rng.gen_range(0..=s - n) as isize
            } else {
                -(rng.gen_range(0..=n - s) as isize)
            }
        };
        let oy = offset(sh, h, rng);
        let ox = offset(sw, w, rng);
        th = window(&th, 1, sh, sw, oy, ox, h, w, 0.0);
        rgb = window(&rgb, 3, sh, sw, oy, ox, h, w, 0.0);
        mask = window(&mask, 1, sh, sw, oy, ox, h, w, 0);
    }
    if cfg.hflip && rng.gen_bool(0.5) {
        for row in th.chunks_mut(w).chain(rgb.chunks_mut(w)) {
            row.reverse();
        }
        for row in mask.chunks_mut(w) {
            row.reverse();
        }
    }
    if cfg.jitter > 0.0 {
        let j = cfg.jitter;
        let brightness = rng.gen_range(1.0 - j..=1.0 + j) as f32;
        let contrast = rng.gen_range(1.0 - j..=1.0 + j) as f32;
        let saturation = rng.gen_range(1.0 - j..=1.0 + j) as f32;
        let n = h * w;
        let mean = rgb.iter().sum::<f32>() / rgb.len() as f32;
        for i in 0..n {
            let px = [rgb[i], rgb[n + i], rgb[2 * n + i]].map(|v| (v * brightness - mean) * contrast + mean);
            let gray = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            for (c, v) in px.iter().enumerate() {
                rgb[c * n + i] = (gray + (v - gray) * saturation).clamp(0.0, 1.0);
            }
        }
    }
    Sample {
        thermal: th,
        rgb,
        mask,
        video_id: f.video_id,
    }
}

/// Stacks samples into a batch with z-scored chemical targets.
pub fn collate<T: Real>(ds: &Dataset, samples: &[Sample]) -> Batch<T> {
    let [h, w] = ds.manifest.image_size;
    let n = samples.len();
    let cast = |v: &[f32]| v.iter().map(|&x| T::lit(x as f64)).collect::<Vec<T>>();
    let thermal: Vec<T> = samples.iter().flat_map(|s| cast(&s.thermal)).collect();
    let rgb: Vec<T> = samples.iter().flat_map(|s| cast(&s.rgb)).collect();
    let masks = samples.iter().flat_map(|s| s.mask.iter().map(|&m| m as usize)).collect();
    let targets: Vec<f64> = samples
        .iter()
        .flat_map(|s| ds.manifest.norm_stats.z_targets(&ds.video(s.video_id).chem))
        .collect();
    Batch {
        thermal: Tensor::from_vec([n, 1, h, w], thermal),
        rgb: Tensor::from_vec([n, 3, h, w], rgb),
        masks,
        video_ids: samples.iter().map(|s| s.video_id).collect(),
        targets_z: Tensor::from_f64([n, 4], &targets),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_resize_keeps_corners_and_values() {
        let m = vec![0u8, 1, 2, 1, 0, 2, 2, 2, 1];
        let up = resize_labels(&m, 3, 3, 5, 5);
        assert_eq!(up[0], 0);
        assert_eq!(up[4], 2);
        assert_eq!(up[24], 1);
        assert!(up.iter().all(|v| *v <= 2));
        assert_eq!(resize_labels(&up, 5, 5, 3, 3), m);
    }

    #[test]
    fn window_pads_with_fill() {
        let src = vec![1.0f32, 2.0, 3.0, 4.0];
        assert_eq!(window(&src, 1, 2, 2, -1, -1, 3, 3, 0.0), vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 4.0]);
        assert_eq!(window(&src, 1, 2, 2, 1, 0, 1, 2, 0.0), vec![3.0, 4.0]);
    }
}
