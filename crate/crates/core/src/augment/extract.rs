//! Lesion masks from the positive difference between a synthetic pathological
//! image and the registered healthy source.

use serde::{Deserialize, Serialize};

use crate::data::ops::{close, remove_small_components};
use crate::data::{BinaryMask2D, Image2D};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Fixed threshold `absolute`.
    Absolute,
    /// `k` robust standard deviations of the difference image, at least `floor`.
    KSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskExtractConfig {
    pub threshold_mode: ThresholdMode,
    pub k: f64,
    pub absolute: f64,
    /// Lower bound on the k-sigma threshold, in intensity units.
    pub floor: f64,
    pub min_component_px: usize,
    pub closing_radius: usize,
    /// Pixels where both images are at or below this level are background and
    /// do not enter the noise estimate.
    pub background_level: f64,
}

impl Default for MaskExtractConfig {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::KSigma,
            k: 3.0,
            absolute: 0.2,
            floor: 0.1,
            min_component_px: 4,
            closing_radius: 1,
            background_level: -0.9,
        }
    }
}

impl MaskExtractConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::InvalidConfig(format!("k must be positive, got {}", self.k)));
        }
        if !(self.absolute.is_finite() && self.floor.is_finite() && self.floor >= 0.0) {
            return Err(Error::InvalidConfig("invalid absolute threshold or floor".into()));
        }
        Ok(())
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// 1.4826 * median absolute deviation.
pub fn robust_sigma(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    1.4826 * median(&mut dev)
}

/// Threshold that [`extract_mask`] applies to the difference image.
pub fn difference_threshold(warped_healthy: &Image2D, synthetic: &Image2D, cfg: &MaskExtractConfig) -> f64 {
    match cfg.threshold_mode {
        ThresholdMode::Absolute => cfg.absolute,
        ThresholdMode::KSigma => {
            let bg = cfg.background_level as f32;
            let d: Vec<f64> = warped_healthy
                .pixels()
                .iter()
                .zip(synthetic.pixels())
                .filter(|(a, b)| a.max(**b) > bg)
                .map(|(a, b)| (b - a) as f64)
                .collect();
            (cfg.k * robust_sigma(&d)).max(cfg.floor)
        }
    }
}

pub fn extract_mask(
    warped_healthy: &Image2D,
    synthetic: &Image2D,
    cfg: &MaskExtractConfig,
) -> Result<BinaryMask2D> {
    cfg.validate()?;
    if warped_healthy.shape() != synthetic.shape() {
        return Err(Error::ShapeMismatch(format!(
            "healthy {:?} vs synthetic {:?}",
            warped_healthy.shape(),
            synthetic.shape()
        )));
    }
    let (h, w) = synthetic.shape();
    let t = difference_threshold(warped_healthy, synthetic, cfg);
    let raw = BinaryMask2D::from_fn(h, w, |y, x| {
        let d = (synthetic.get(y, x) - warped_healthy.get(y, x)) as f64;
        d > 0.0 && d > t
    });
    let kept = remove_small_components(&raw, cfg.min_component_px);
    Ok(close(&kept, cfg.closing_radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dice(a: &BinaryMask2D, b: &BinaryMask2D) -> f64 {
        2.0 * a.intersection(b).count() as f64 / (a.count() + b.count()) as f64
    }

    fn disk(cy: f64, cx: f64, r: f64) -> BinaryMask2D {
        BinaryMask2D::from_fn(32, 32, |y, x| {
            (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r * r
        })
    }

    #[test]
    fn identical_inputs_give_empty_mask() {
        let img = Image2D::from_fn(32, 32, |y, x| ((y * x) as f32 / 1024.0).sin());
        let m = extract_mask(&img, &img, &MaskExtractConfig::default()).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn pasted_blob_is_recovered() {
        let support = disk(12.0, 15.0, 4.0);
        let zero = Image2D::filled(32, 32, 0.0);
        let pasted = Image2D::from_fn(32, 32, |y, x| if support.get(y, x) { 0.5 } else { 0.0 });
        let m = extract_mask(&zero, &pasted, &MaskExtractConfig::default()).unwrap();
        assert!(dice(&m, &support) >= 0.9);
    }

    #[test]
    fn small_components_are_dropped() {
        let big = disk(10.0, 10.0, 3.0);
        let small = disk(24.0, 24.0, 1.0);
        assert!(small.count() < 8 && big.count() > 8);
        let zero = Image2D::filled(32, 32, 0.0);
        let both = big.union(&small);
        let img = Image2D::from_fn(32, 32, |y, x| if both.get(y, x) { 0.5 } else { 0.0 });
        let cfg = MaskExtractConfig {
            min_component_px: 8,
            ..Default::default()
        };
        let m = extract_mask(&zero, &img, &cfg).unwrap();
        assert!(m.intersection(&small).is_empty());
        assert!(big.is_subset_of(&m));
    }

    #[test]
    fn hypointense_changes_are_ignored() {
        let support = disk(16.0, 16.0, 4.0);
        let zero = Image2D::filled(32, 32, 0.0);
        let dark = Image2D::from_fn(32, 32, |y, x| if support.get(y, x) { -0.5 } else { 0.0 });
        assert!(extract_mask(&zero, &dark, &MaskExtractConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn robust_sigma_of_gaussian_like_sample() {
        let v: Vec<f64> = (0..1001).map(|i| (i as f64 - 500.0) / 100.0).collect();
        // uniform on [-5, 5]: MAD = 2.5
        assert!((robust_sigma(&v) - 1.4826 * 2.5).abs() < 1e-9);
    }

    #[test]
    fn absolute_mode_uses_fixed_threshold() {
        let zero = Image2D::filled(32, 32, 0.0);
        let support = disk(16.0, 16.0, 4.0);
        let img = Image2D::from_fn(32, 32, |y, x| if support.get(y, x) { 0.15 } else { 0.0 });
        let cfg = MaskExtractConfig {
            threshold_mode: ThresholdMode::Absolute,
            absolute: 0.2,
            ..Default::default()
        };
        assert!(extract_mask(&zero, &img, &cfg).unwrap().is_empty());
        let cfg = MaskExtractConfig {
            absolute: 0.1,
            ..cfg
        };
        assert_eq!(extract_mask(&zero, &img, &cfg).unwrap(), support);
    }
}
