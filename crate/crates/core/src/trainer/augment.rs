use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ops::{resize_bilinear, warp_image, warp_mask, DisplacementField};
use crate::data::{BinaryMask2D, Image2D};

/// In-training augmentation switches. Elastic values are desk-scale defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub mirror: bool,
    pub elastic: bool,
    /// Maximum displacement (pixels) at the control points.
    pub elastic_amplitude: f32,
    /// Control points per side of the coarse displacement grid.
    pub elastic_grid: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            mirror: true,
            elastic: true,
            elastic_amplitude: 2.0,
            elastic_grid: 4,
        }
    }
}

/// Coarse uniform random displacements, bilinearly upsampled to `h`×`w`.
pub fn random_elastic_field(
    h: usize,
    w: usize,
    amplitude: f32,
    grid: usize,
    rng: &mut impl Rng,
) -> DisplacementField {
    if amplitude <= 0.0 {
        return DisplacementField::zeros(h, w);
    }
    let grid = grid.max(2);
    let mut coarse = || {
        let img = Image2D::from_fn(grid, grid, |_, _| rng.random_range(-amplitude..=amplitude));
        resize_bilinear(&img, h, w).into_pixels()
    };
    let dy = coarse();
    let dx = coarse();
    DisplacementField {
        height: h,
        width: w,
        dy,
        dx,
    }
}

/// Mirrors with p = 0.5 and elastically deforms with p = 0.5; the mask gets the same transform.
pub fn augment_in_training(
    x: &Image2D,
    mask: Option<&BinaryMask2D>,
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
) -> (Image2D, Option<BinaryMask2D>) {
    let mut img = x.clone();
    let mut m = mask.cloned();
    // draw both coins regardless of the switches so streams do not shift with config
    let flip = rng.random_bool(0.5);
    let deform = rng.random_bool(0.5);
    if cfg.mirror && flip {
        img = img.mirrored();
        m = m.map(|m| m.mirrored());
    }
    if cfg.elastic && deform {
        let field = random_elastic_field(
            img.height(),
            img.width(),
            cfg.elastic_amplitude,
            cfg.elastic_grid,
            rng,
        );
        img = warp_image(&img, &field);
        m = m.map(|m| warp_mask(&m, &field));
    }
    (img, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{add_lesions, enlarge_ventricles, gen_healthy, PhantomSpec};
    use crate::rng::rng_for;

    #[test]
    fn mirroring_twice_is_identity() {
        let spec = PhantomSpec::default();
        let h = gen_healthy(&spec, 0).unwrap();
        assert_eq!(h.image.mirrored().mirrored(), h.image);
        assert_eq!(h.brain.mirrored().mirrored(), h.brain);
    }

    #[test]
    fn zero_amplitude_elastic_is_identity() {
        let spec = PhantomSpec::default();
        let h = gen_healthy(&spec, 0).unwrap();
        let cfg = AugmentConfig {
            mirror: false,
            elastic_amplitude: 0.0,
            ..Default::default()
        };
        for s in 0..8 {
            let (img, m) = augment_in_training(&h.image, Some(&h.brain), &cfg, &mut rng_for(s, &[]));
            assert_eq!(img, h.image);
            assert_eq!(m.unwrap(), h.brain);
        }
    }

    #[test]
    fn warped_mask_tracks_warped_lesions() {
        // the same small field applied to lesioned and lesion-free images: thresholding
        // their difference must recover the nearest-neighbour-warped mask
        let spec = PhantomSpec::default();
        let cfg = AugmentConfig {
            mirror: false,
            elastic_amplitude: 1.5,
            ..Default::default()
        };
        let mut total = 0.0;
        for idx in 0..10 {
            let h = gen_healthy(&spec, idx).unwrap();
            let (base, vent) = enlarge_ventricles(&h, &spec, idx);
            let (les, mask) = add_lesions(&base, &vent, &h.brain, &spec, idx).unwrap();
            let mut rng = rng_for(idx, &[5]);
            let field = random_elastic_field(64, 64, cfg.elastic_amplitude, cfg.elastic_grid, &mut rng);
            let wm = warp_mask(&mask, &field);
            let wl = warp_image(&les, &field);
            let wb = warp_image(&base, &field);
            let blob = BinaryMask2D::from_fn(64, 64, |y, x| {
                wl.get(y, x) - wb.get(y, x) >= 0.25 * spec.lesion_intensity_boost as f32
            });
            let inter = wm.intersection(&blob).count() as f64;
            let dice = 2.0 * inter / (wm.count() + blob.count()) as f64;
            assert!(dice >= 0.9, "subject {idx}: dice {dice}");
            total += dice;
        }
        assert!(total / 10.0 >= 0.95, "mean dice {}", total / 10.0);
    }
}
