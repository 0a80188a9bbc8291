//! On-disk formats: 16-bit PNG, raw little-endian float32 with a JSON sidecar, and 8-bit PNG masks.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::image::{BinaryMask2D, Image2D};
use crate::error::{Error, Result};

/// Sidecar describing a raw float32 file. `d` is present for slice stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub h: usize,
    pub w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "unit_spacing")]
    pub spacing: [f32; 2],
}

fn unit_spacing() -> [f32; 2] {
    [1.0, 1.0]
}

/// A stack of `depth` slices of identical shape, as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
    pub spacing: (f32, f32),
    pub data: Vec<f32>,
}

impl Volume {
    pub fn slice(&self, index: usize) -> Result<Image2D> {
        let n = self.height * self.width;
        let mut img = Image2D::new(
            self.height,
            self.width,
            self.data[index * n..(index + 1) * n].to_vec(),
        )?;
        img.spacing = self.spacing;
        Ok(img)
    }
}

pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

/// Reads a raw float32 file (2D or a slice stack) using its sidecar.
pub fn read_raw(path: &Path) -> Result<Volume> {
    let meta: RawSidecar = serde_json::from_slice(&read_bytes(&sidecar_path(path))?)?;
    let depth = meta.d.unwrap_or(1);
    let bytes = read_bytes(path)?;
    let expected = depth * meta.h * meta.w * 4;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} bytes on disk, sidecar implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume {
        depth,
        height: meta.h,
        width: meta.w,
        spacing: (meta.spacing[0], meta.spacing[1]),
        data,
    })
}

pub fn write_raw(path: &Path, img: &Image2D) -> Result<()> {
    let mut bytes = Vec::with_capacity(img.pixels().len() * 4);
    for v in img.pixels() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    let meta = RawSidecar {
        h: img.height(),
        w: img.width(),
        d: None,
        spacing: [img.spacing.0, img.spacing.1],
    };
    write_bytes(&sidecar_path(path), &serde_json::to_vec(&meta)?)
}

/// 16-bit code for a value in [-1, 1].
fn to_u16(v: f32) -> u16 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 65535.0).round() as u16
}

fn from_u16(v: u16) -> f32 {
    v as f32 / 65535.0 * 2.0 - 1.0
}

pub fn write_png16(path: &Path, img: &Image2D) -> Result<()> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().iter().map(|&v| to_u16(v)).collect(),
    )
    .expect("buffer size matches dimensions");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    buf.save(path)?;
    Ok(())
}

/// Reads a grayscale PNG, mapping the full 16-bit range onto [-1, 1].
pub fn read_png16(path: &Path) -> Result<Image2D> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    Image2D::new(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(from_u16).collect(),
    )
}

/// Reads any supported image file as a slice stack.
pub fn read_volume(path: &Path) -> Result<Volume> {
    match extension(path).as_str() {
        "raw" => read_raw(path),
        "png" => {
            let img = read_png16(path)?;
            Ok(Volume {
                depth: 1,
                height: img.height(),
                width: img.width(),
                spacing: img.spacing,
                data: img.into_pixels(),
            })
        }
        other => Err(Error::UnsupportedFormat(format!(
            "{} (extension {other:?}; expected .png or .raw)",
            path.display()
        ))),
    }
}

/// Loads a single 2-D image in either format.
pub fn load_image(path: &Path) -> Result<Image2D> {
    let vol = read_volume(path)?;
    if vol.depth != 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} slices, expected one",
            path.display(),
            vol.depth
        )));
    }
    vol.slice(0)
}

/// Saves by extension: `.raw` is bit-exact float32, `.png` is 16-bit quantized.
pub fn save_image(path: &Path, img: &Image2D) -> Result<()> {
    match extension(path).as_str() {
        "raw" => write_raw(path, img),
        "png" => write_png16(path, img),
        other => Err(Error::UnsupportedFormat(format!(
            "cannot save {} (extension {other:?})",
            path.display()
        ))),
    }
}

/// Reads an 8-bit PNG mask; any nonzero value is foreground.
pub fn load_mask(path: &Path) -> Result<BinaryMask2D> {
    let img = image::open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    BinaryMask2D::new(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(|v| u8::from(v > 0)).collect(),
    )
}

pub fn save_mask(path: &Path, mask: &BinaryMask2D) -> Result<()> {
    let buf = GrayImage::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.pixels().iter().map(|&v| v * 255).collect(),
    )
    .expect("buffer size matches dimensions");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    buf.save(path)?;
    Ok(())
}

/// Image files (`.png`/`.raw`) in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries =
        fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut out = Vec::new();
    for entry in entries {
        let p = entry
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .path();
        if p.is_file() && matches!(extension(&p).as_str(), "png" | "raw") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn raw_round_trip_is_bit_exact(vals in proptest::collection::vec(-1.0f32..=1.0, 12)) {
            let dir = tempfile::tempdir().unwrap();
            let mut img = Image2D::new(3, 4, vals).unwrap();
            img.spacing = (0.5, 2.0);
            let p = dir.path().join("a.raw");
            save_image(&p, &img).unwrap();
            let back = load_image(&p).unwrap();
            prop_assert_eq!(back.pixels(), img.pixels());
            prop_assert_eq!(back.spacing, img.spacing);
        }

        #[test]
        fn png16_round_trip_within_one_code(vals in proptest::collection::vec(-1.0f32..=1.0, 20)) {
            let dir = tempfile::tempdir().unwrap();
            let img = Image2D::new(4, 5, vals).unwrap();
            let p = dir.path().join("a.png");
            save_image(&p, &img).unwrap();
            let back = load_image(&p).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                // one 16-bit code spans 2/65535 of the full range, i.e. 1/65535 of the half-range
                prop_assert!((a - b).abs() <= 1.0 / 65535.0 + 1e-7);
            }
        }
    }

    #[test]
    fn mask_png_maps_255_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask2D::from_fn(5, 6, |y, x| y == x);
        let p = dir.path().join("m.png");
        save_mask(&p, &m).unwrap();
        let raw = image::open(&p).unwrap().into_luma8();
        assert_eq!(raw.get_pixel(2, 2).0[0], 255);
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn unsupported_extension_is_rejected() {
        let err = read_volume(Path::new("x.nii")).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }
}
