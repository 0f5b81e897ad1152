//! Deterministic synthetic RGB-thermal dataset in which every video carries
//! a camera fingerprint that predicts its class on the training split.

pub mod chem;
pub mod fingerprint;
pub mod io;
pub mod manifest;
pub mod render;

use std::path::Path;

use fryshort_autograd::parallel::{map_indexed, Exec};

pub use chem::{classify_totox, derive_totox, ChemicalState, OilClass, Target, TOTOX_THRESHOLD};
pub use fingerprint::{CameraFingerprint, FingerprintBounds};
pub use io::{read_dataset, write_dataset};
pub use manifest::{
    compute_norm_stats, denormalize, sample_manifest, DatasetManifest, MeanStd, NormStats, OilType, Split,
    SynthConfig, VideoSpec,
};
pub use render::{render_frame, FrameGeometry, FramePair};

use crate::error::Result;

/// Renders every frame of the manifest, quantized to file precision, in
/// manifest order.
pub fn render_all(manifest: &DatasetManifest) -> Result<Vec<FramePair>> {
    let keys: Vec<(usize, usize)> = manifest
        .videos
        .iter()
        .flat_map(|v| (0..v.n_frames).map(move |f| (v.video_id, f)))
        .collect();
    map_indexed(Exec::auto(), keys.len(), |i| {
        manifest.render_frame(keys[i].0, keys[i].1).map(FramePair::quantized)
    })
    .into_iter()
    .collect()
}

/// A manifest with all of its frames in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    frames: Vec<FramePair>,
}

impl Dataset {
    /// Renders frames directly from the manifest. Pixel values equal those
    /// obtained by writing the dataset to disk and reading it back.
    pub fn render(manifest: DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let frames = render_all(&manifest)?;
        Ok(Self { manifest, frames })
    }

    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        Self::render(sample_manifest(cfg)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (manifest, reader) = read_dataset(dir)?;
        let frames = reader.collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, frames })
    }

    pub fn frames(&self) -> &[FramePair] {
        &self.frames
    }

    pub fn split_frames(&self, split: Split) -> Vec<&FramePair> {
        self.frames
            .iter()
            .filter(|f| self.video(f.video_id).split == split)
            .collect()
    }

    pub fn video(&self, id: usize) -> &VideoSpec {
        self.manifest.video(id).expect("frame belongs to a manifest video")
    }

    /// Frame `frame_idx` of video `video_id`. Frames are stored in manifest
    /// order, so the offset is the frame count of the preceding videos.
    pub fn frame(&self, video_id: usize, frame_idx: usize) -> &FramePair {
        let mut offset = 0;
        for v in &self.manifest.videos {
            if v.video_id == video_id {
                assert!(frame_idx < v.n_frames, "frame {frame_idx} outside video {video_id}");
                return &self.frames[offset + frame_idx];
            }
            offset += v.n_frames;
        }
        panic!("video {video_id} is not in the manifest")
    }

    pub fn video_frames(&self, id: usize) -> Vec<&FramePair> {
        self.frames.iter().filter(|f| f.video_id == id).collect()
    }
}
