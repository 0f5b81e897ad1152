//! Dataset directory format:
//!
//! ```text
//! manifest.json
//! frames/<video_id>/<frame_idx>_thermal.png   16-bit gray, round(x * 65535)
//! frames/<video_id>/<frame_idx>_rgb.png       8-bit RGB,   round(x * 255)
//! frames/<video_id>/<frame_idx>_mask.png      8-bit gray,  labels {0, 1, 2}
//! ```

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use sha2::{Digest, Sha256};

use super::manifest::{DatasetManifest, SCHEMA_VERSION};
use super::render::FramePair;
use crate::error::{FryError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Plane {
    Thermal,
    Rgb,
    Mask,
}

impl Plane {
    const ALL: [Plane; 3] = [Plane::Thermal, Plane::Rgb, Plane::Mask];

    fn suffix(self) -> &'static str {
        match self {
            Plane::Thermal => "thermal",
            Plane::Rgb => "rgb",
            Plane::Mask => "mask",
        }
    }
}

fn rel_path(video_id: usize, frame_idx: usize, plane: Plane) -> String {
    format!("frames/{video_id}/{frame_idx}_{}.png", plane.suffix())
}

fn encode(img: image::DynamicImage) -> Vec<u8> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .expect("in-memory PNG encoding");
    bytes
}

fn encode_plane(frame: &FramePair, plane: Plane) -> Vec<u8> {
    let (w, h) = (frame.width as u32, frame.height as u32);
    let n = frame.height * frame.width;
    let img = match plane {
        Plane::Thermal => {
            let px: Vec<u16> = frame
                .thermal
                .iter()
                .map(|&v| (v as f64 * 65535.0).round().clamp(0.0, 65535.0) as u16)
                .collect();
            image::DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, px).expect("size"))
        }
        Plane::Rgb => {
            let mut px = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    px.push((frame.rgb[c * n + i] as f64 * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
            image::DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, px).expect("size"))
        }
        Plane::Mask => image::DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, frame.mask.clone()).expect("size"),
        ),
    };
    encode(img)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// PNG bytes of all three planes of a frame, keyed by relative path.
pub fn encode_frame(frame: &FramePair) -> Vec<(String, Vec<u8>)> {
    Plane::ALL
        .iter()
        .map(|&p| (rel_path(frame.video_id, frame.frame_idx, p), encode_plane(frame, p)))
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| FryError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| FryError::io(path, e))
}

/// Renders and writes every frame, returning the manifest with checksums.
pub fn write_dataset(manifest: &DatasetManifest, out_dir: &Path) -> Result<DatasetManifest> {
    manifest.validate()?;
    let frames = super::render_all(manifest)?;
    let mut out = manifest.clone();
    out.checksums.clear();
    for frame in &frames {
        for (rel, bytes) in encode_frame(frame) {
            write_file(&out_dir.join(&rel), &bytes)?;
            out.checksums.insert(rel, sha256_hex(&bytes));
        }
    }
    let json = serde_json::to_vec_pretty(&out).expect("manifest serializes");
    write_file(&out_dir.join(MANIFEST_FILE), &json)?;
    Ok(out)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| FryError::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| FryError::Format(format!("{}: {e}", path.display())))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| FryError::Format("manifest has no schema_version".into()))? as u32;
    if found != SCHEMA_VERSION {
        return Err(FryError::Schema {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let manifest: DatasetManifest =
        serde_json::from_value(value).map_err(|e| FryError::Format(format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

fn read_checked(dir: &Path, manifest: &DatasetManifest, rel: &str) -> Result<Vec<u8>> {
    let path: PathBuf = dir.join(rel);
    let bytes = fs::read(&path).map_err(|e| FryError::io(&path, e))?;
    let expected = manifest
        .checksums
        .get(rel)
        .ok_or_else(|| FryError::Checksum(format!("{rel} (not listed in manifest)")))?;
    if &sha256_hex(&bytes) != expected {
        return Err(FryError::Checksum(rel.to_string()));
    }
    Ok(bytes)
}

fn decode(bytes: &[u8], rel: &str) -> Result<image::DynamicImage> {
    image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| FryError::Format(format!("{rel}: {e}")))
}

pub fn read_frame(dir: &Path, manifest: &DatasetManifest, video_id: usize, frame_idx: usize) -> Result<FramePair> {
    let [h, w] = manifest.image_size;
    let n = h * w;
    let check = |img: &image::DynamicImage, rel: &str| {
        if img.width() as usize != w || img.height() as usize != h {
            Err(FryError::Format(format!("{rel}: expected {w}x{h}")))
        } else {
            Ok(())
        }
    };
    let rel = rel_path(video_id, frame_idx, Plane::Thermal);
    let img = decode(&read_checked(dir, manifest, &rel)?, &rel)?;
    check(&img, &rel)?;
    let image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(FryError::Format(format!("{rel}: expected 16-bit grayscale")));
    };
    let thermal = buf.into_raw().into_iter().map(|v| (v as f64 / 65535.0) as f32).collect();

    let rel = rel_path(video_id, frame_idx, Plane::Rgb);
    let img = decode(&read_checked(dir, manifest, &rel)?, &rel)?;
    check(&img, &rel)?;
    let image::DynamicImage::ImageRgb8(buf) = img else {
        return Err(FryError::Format(format!("{rel}: expected 8-bit RGB")));
    };
    let raw = buf.into_raw();
    let mut rgb = vec![0f32; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            rgb[c * n + i] = (raw[3 * i + c] as f64 / 255.0) as f32;
        }
    }

    let rel = rel_path(video_id, frame_idx, Plane::Mask);
    let img = decode(&read_checked(dir, manifest, &rel)?, &rel)?;
    check(&img, &rel)?;
    let image::DynamicImage::ImageLuma8(buf) = img else {
        return Err(FryError::Format(format!("{rel}: expected 8-bit grayscale")));
    };
    let mask = buf.into_raw();
    if mask.iter().any(|&m| m > 2) {
        return Err(FryError::Format(format!("{rel}: labels outside {{0, 1, 2}}")));
    }
    Ok(FramePair {
        height: h,
        width: w,
        thermal,
        rgb,
        mask,
        video_id,
        frame_idx,
    })
}

/// Lazily decodes frames in manifest order.
pub struct FrameReader {
    dir: PathBuf,
    manifest: DatasetManifest,
    keys: std::vec::IntoIter<(usize, usize)>,
}

impl Iterator for FrameReader {
    type Item = Result<FramePair>;

    fn next(&mut self) -> Option<Self::Item> {
        let (v, f) = self.keys.next()?;
        Some(read_frame(&self.dir, &self.manifest, v, f))
    }
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, FrameReader)> {
    let manifest = read_manifest(dir)?;
    let keys: Vec<(usize, usize)> = manifest
        .videos
        .iter()
        .flat_map(|v| (0..v.n_frames).map(move |f| (v.video_id, f)))
        .collect();
    let reader = FrameReader {
        dir: dir.to_path_buf(),
        manifest: manifest.clone(),
        keys: keys.into_iter(),
    };
    Ok((manifest, reader))
}
