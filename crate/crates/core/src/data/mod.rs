//! Image and mask types, preprocessing, and the unpaired healthy/pathological dataset.

mod image;
pub mod io;
pub mod ops;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use self::image::{BinaryMask2D, Image2D, NETWORK_SIZES};
use crate::error::{Error, Result};
use io::Volume;

/// Background value of foreground (masked lesion intensity) images.
///
/// Zero matches the background of a generator's foreground output, which is
/// what the foreground discriminator compares these images against.
pub const FOREGROUND_FILL: f32 = 0.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Normalization {
    /// Affine map of [min, max] onto [-1, 1].
    MinMax,
    /// Affine map of [p_low, p_high] onto [-1, 1], clamped.
    Percentile { low: f32, high: f32 },
    /// Keep data already inside [-1, 1]; otherwise use 1/99 percentiles.
    #[default]
    Auto,
}

impl Normalization {
    pub fn percentile() -> Self {
        Normalization::Percentile {
            low: 1.0,
            high: 99.0,
        }
    }
}

fn check_finite(values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Linear-interpolated percentile of an already sorted slice.
fn percentile_sorted(sorted: &[f32], p: f32) -> f32 {
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f32;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let f = pos - lo as f32;
    sorted[lo] * (1.0 - f) + sorted[hi] * f
}

fn affine_to_unit(raw: &Image2D, lo: f32, hi: f32) -> Image2D {
    let mut out = raw.clone();
    if hi <= lo {
        out.pixels_mut().fill(-1.0);
        return out;
    }
    if lo == -1.0 && hi == 1.0 {
        out.clamp_unit();
        return out;
    }
    let range = hi - lo;
    for v in out.pixels_mut() {
        *v = ((*v - lo) / range * 2.0 - 1.0).clamp(-1.0, 1.0);
    }
    out
}

/// Maps raw intensities onto [-1, 1]. A constant input maps to all −1.
pub fn normalize(raw: &Image2D, mode: Normalization) -> Result<Image2D> {
    check_finite(raw.pixels())?;
    let p = raw.pixels();
    if p.is_empty() {
        return Err(Error::EmptyVolume);
    }
    let min = p.iter().copied().fold(f32::INFINITY, f32::min);
    let max = p.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    match mode {
        Normalization::MinMax => Ok(affine_to_unit(raw, min, max)),
        Normalization::Auto if min >= -1.0 && max <= 1.0 => Ok(raw.clone()),
        Normalization::Auto => normalize(raw, Normalization::percentile()),
        Normalization::Percentile { low, high } => {
            let mut sorted = p.to_vec();
            sorted.sort_by(f32::total_cmp);
            let lo = percentile_sorted(&sorted, low);
            let hi = percentile_sorted(&sorted, high);
            if hi > lo {
                Ok(affine_to_unit(raw, lo, hi))
            } else {
                // sparse images can have coinciding percentiles; fall back to the full range
                Ok(affine_to_unit(raw, min, max))
            }
        }
    }
}

/// Masked lesion-intensity image with the default background fill.
pub fn make_foreground(x: &Image2D, mask: &BinaryMask2D) -> Result<Image2D> {
    make_foreground_with_fill(x, mask, FOREGROUND_FILL)
}

/// Keeps `x` where the mask is set and writes `fill` elsewhere.
pub fn make_foreground_with_fill(x: &Image2D, mask: &BinaryMask2D, fill: f32) -> Result<Image2D> {
    if x.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "image {:?} vs mask {:?}",
            x.shape(),
            mask.shape()
        )));
    }
    let mut out = x.clone();
    for (v, &m) in out.pixels_mut().iter_mut().zip(mask.pixels()) {
        if m == 0 {
            *v = fill;
        }
    }
    Ok(out)
}

/// Centre slice, isotropic resampling, resize to `target × target`, normalization.
pub fn preprocess_slice(vol: &Volume, target: usize, mode: Normalization) -> Result<Image2D> {
    if vol.depth == 0 || vol.height == 0 || vol.width == 0 || vol.data.is_empty() {
        return Err(Error::EmptyVolume);
    }
    check_finite(&vol.data)?;
    let slice = vol.slice(vol.depth / 2)?;
    let (sy, sx) = slice.spacing;
    let iso = if sy > 0.0 && sx > 0.0 && (sy - sx).abs() > 1e-6 {
        let s = sy.min(sx);
        let h = ((slice.height() as f32 * sy / s).round() as usize).max(1);
        let w = ((slice.width() as f32 * sx / s).round() as usize).max(1);
        ops::resize_bilinear(&slice, h, w)
    } else {
        slice
    };
    let resized = ops::resize_bilinear(&iso, target, target);
    let mut out = normalize(&resized, mode)?;
    out.spacing = resized.spacing;
    Ok(out)
}

/// Mask counterpart of [`preprocess_slice`] (nearest-neighbour, no normalization).
pub fn preprocess_mask(mask: &BinaryMask2D, target: usize) -> BinaryMask2D {
    ops::resize_nearest_mask(mask, target, target)
}

/// Two unpaired cohorts plus the foreground images derived from the pathological one.
#[derive(Debug, Clone)]
pub struct UnpairedDataset {
    pub healthy: Vec<Image2D>,
    pub pathological: Vec<(Image2D, BinaryMask2D)>,
    pub foreground: Vec<Image2D>,
    pub healthy_ids: Vec<String>,
    pub pathological_ids: Vec<String>,
}

impl UnpairedDataset {
    pub fn new(
        healthy: Vec<(String, Image2D)>,
        pathological: Vec<(String, Image2D, BinaryMask2D)>,
    ) -> Result<Self> {
        let mut foreground = Vec::with_capacity(pathological.len());
        for (_, img, mask) in &pathological {
            foreground.push(make_foreground(img, mask)?);
        }
        let (healthy_ids, healthy) = healthy.into_iter().unzip();
        let mut pathological_ids = Vec::new();
        let mut pairs = Vec::new();
        for (id, img, mask) in pathological {
            pathological_ids.push(id);
            pairs.push((img, mask));
        }
        Ok(Self {
            healthy,
            pathological: pairs,
            foreground,
            healthy_ids,
            pathological_ids,
        })
    }

    pub fn is_trainable(&self) -> bool {
        !self.healthy.is_empty() && !self.pathological.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Resize everything to this side length; `None` keeps the stored size.
    pub target_size: Option<usize>,
    pub normalization: Normalization,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            target_size: None,
            normalization: Normalization::Auto,
        }
    }
}

fn load_one(path: &Path, opts: &LoadOptions) -> Result<Image2D> {
    let vol = io::read_volume(path)?;
    let target = opts.target_size.unwrap_or(vol.height.max(vol.width));
    if opts.target_size.is_none() && vol.height != vol.width {
        return Err(Error::ShapeMismatch(format!(
            "{} is {}x{}; pass a target size to resample",
            path.display(),
            vol.height,
            vol.width
        )));
    }
    preprocess_slice(&vol, target, opts.normalization)
}

/// Loads `root/healthy/*`, `root/pathological/images/*` and `root/pathological/masks/*`.
pub fn load_dataset(root: &Path, opts: &LoadOptions) -> Result<UnpairedDataset> {
    let healthy_dir = root.join("healthy");
    let image_dir = root.join("pathological").join("images");
    let mask_dir = root.join("pathological").join("masks");
    let mut healthy = Vec::new();
    if healthy_dir.is_dir() {
        for p in io::list_images(&healthy_dir)? {
            healthy.push((io::stem(&p), load_one(&p, opts)?));
        }
    }
    let mut pathological = Vec::new();
    if image_dir.is_dir() {
        for p in io::list_images(&image_dir)? {
            let stem = io::stem(&p);
            let mask_path = mask_dir.join(format!("{stem}.png"));
            if !mask_path.is_file() {
                return Err(Error::MissingMask(p));
            }
            let img = load_one(&p, opts)?;
            let mut mask = io::load_mask(&mask_path)?;
            if mask.shape() != img.shape() {
                if opts.target_size.is_some() {
                    mask = preprocess_mask(&mask, img.height());
                } else {
                    return Err(Error::ShapeMismatch(format!(
                        "{stem}: image {:?} vs mask {:?}",
                        img.shape(),
                        mask.shape()
                    )));
                }
            }
            pathological.push((stem, img, mask));
        }
    }
    log::info!(
        "loaded {} healthy and {} pathological images from {}",
        healthy.len(),
        pathological.len(),
        root.display()
    );
    UnpairedDataset::new(healthy, pathological)
}

/// Writes a dataset in the layout [`load_dataset`] reads. Images are raw float32.
pub fn save_dataset(root: &Path, ds: &UnpairedDataset) -> Result<()> {
    for (id, img) in ds.healthy_ids.iter().zip(&ds.healthy) {
        io::save_image(&root.join("healthy").join(format!("{id}.raw")), img)?;
    }
    for (id, (img, mask)) in ds.pathological_ids.iter().zip(&ds.pathological) {
        io::save_image(
            &root
                .join("pathological")
                .join("images")
                .join(format!("{id}.raw")),
            img,
        )?;
        io::save_mask(
            &root
                .join("pathological")
                .join("masks")
                .join(format!("{id}.png")),
            mask,
        )?;
    }
    std::fs::create_dir_all(root.join("healthy"))
        .map_err(|e| Error::io("creating healthy dir", e))?;
    std::fs::create_dir_all(root.join("pathological").join("images"))
        .map_err(|e| Error::io("creating pathological dir", e))?;
    Ok(())
}
