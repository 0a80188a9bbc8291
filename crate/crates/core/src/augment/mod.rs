//! Offline augmentation: synthesize pathological images from healthy ones,
//! register the source onto each synthetic image and recover lesion masks from
//! the difference.

mod extract;
mod ffd;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use extract::{difference_threshold, extract_mask, robust_sigma, MaskExtractConfig, ThresholdMode};
pub use ffd::{mean_squared_difference, register_ffd, FfdConfig, Registration};

use crate::data::ops::dilate;
use crate::data::{io, BinaryMask2D, Image2D};
use crate::error::{Error, Result};
use crate::networks::{generator_forward, FusionProducts, Generator};
use crate::rng::{rng_for, stream};

/// `k_samples` generator passes over `x`. With dropout active each pass draws
/// its own dropout masks from `(seed, sample)`.
pub fn synthesize(
    gen: &Generator<f32>,
    x: &Image2D,
    k_samples: usize,
    dropout_active: bool,
    seed: u64,
) -> Result<Vec<FusionProducts>> {
    if k_samples == 0 {
        return Err(Error::InvalidConfig("k_samples must be at least 1".into()));
    }
    (0..k_samples)
        .map(|k| {
            let mut rng = rng_for(seed, &[stream::SYNTH, k as u64]);
            generator_forward(gen, x, dropout_active, &mut rng)
        })
        .collect()
}

/// Mean |synthetic − source| outside the mask dilated by `margin` pixels.
pub fn background_change(source: &Image2D, synthetic: &Image2D, mask: &BinaryMask2D, margin: usize) -> f64 {
    let grown = dilate(mask, margin);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, (&a, &b)) in source.pixels().iter().zip(synthetic.pixels()).enumerate() {
        if grown.pixels()[i] == 0 {
            sum += (a - b).abs() as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub const BACKGROUND_MARGIN: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub k_per_subject: usize,
    pub seed: u64,
    pub dropout_active: bool,
    pub ffd: FfdConfig,
    pub extract: MaskExtractConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k_per_subject: 1,
            seed: 0,
            dropout_active: true,
            ffd: FfdConfig::default(),
            extract: MaskExtractConfig::default(),
        }
    }
}

/// Synthetic image, its recovered mask and the quantities recorded for it.
#[derive(Debug, Clone)]
pub struct AugmentedItem {
    pub image: Image2D,
    pub mask: BinaryMask2D,
    pub warped_source: Image2D,
    pub products: FusionProducts,
    pub registration_before: f64,
    pub registration_after: f64,
    pub background_change: f64,
}

/// The full per-image pipeline: synthesize, register source → synthetic, extract.
pub fn augment_one(
    g_p: &Generator<f32>,
    x_h: &Image2D,
    cfg: &PipelineConfig,
    sample_seed: u64,
) -> Result<AugmentedItem> {
    let mut rng = rng_for(sample_seed, &[stream::SYNTH]);
    let products = generator_forward(g_p, x_h, cfg.dropout_active, &mut rng)?;
    let image = products.output.clone();
    let reg = register_ffd(x_h, &image, &cfg.ffd)?;
    let mask = extract_mask(&reg.warped, &image, &cfg.extract)?;
    Ok(AugmentedItem {
        background_change: background_change(x_h, &image, &mask, BACKGROUND_MARGIN),
        image,
        mask,
        warped_source: reg.warped,
        products,
        registration_before: reg.ssd_before,
        registration_after: reg.ssd_after,
    })
}

/// Seed of sample `k` of source subject `index`.
pub fn sample_seed(seed: u64, index: usize, k: usize) -> u64 {
    crate::rng::mix(seed, &[stream::SYNTH, index as u64, k as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub source_id: String,
    pub source_index: usize,
    pub sample: usize,
    pub sample_seed: u64,
    pub image: String,
    pub mask: String,
    pub mask_pixels: usize,
    pub empty_mask: bool,
    pub registration_mse_before: f64,
    pub registration_mse_after: f64,
    pub background_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub generator: String,
    pub config: PipelineConfig,
    pub items: Vec<ManifestItem>,
}

/// Runs [`augment_one`] over every healthy image `k_per_subject` times and
/// writes `pathological/images/*.raw`, `pathological/masks/*.png` and
/// `manifest.json` under `out_dir`.
pub fn build_augmented_dataset(
    g_p: &Generator<f32>,
    generator_label: &str,
    healthy: &[(String, Image2D)],
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<AugmentManifest> {
    if cfg.k_per_subject == 0 {
        return Err(Error::InvalidConfig("k_per_subject must be at least 1".into()));
    }
    if healthy.is_empty() {
        return Err(Error::EmptyDataset("no healthy images to augment".into()));
    }
    cfg.ffd.validate()?;
    cfg.extract.validate()?;
    let jobs: Vec<(usize, usize)> = (0..healthy.len())
        .flat_map(|i| (0..cfg.k_per_subject).map(move |k| (i, k)))
        .collect();
    let items = jobs
        .par_iter()
        .map(|&(i, k)| {
            let (source_id, x_h) = &healthy[i];
            let s = sample_seed(cfg.seed, i, k);
            let item = augment_one(g_p, x_h, cfg, s)?;
            let id = format!("syn_{source_id}_{k:02}");
            let image_rel = format!("pathological/images/{id}.raw");
            let mask_rel = format!("pathological/masks/{id}.png");
            io::save_image(&out_dir.join(&image_rel), &item.image)?;
            io::save_mask(&out_dir.join(&mask_rel), &item.mask)?;
            if item.mask.is_empty() {
                log::warn!("{id}: no lesion recovered, written with an empty mask");
            }
            Ok(ManifestItem {
                id,
                source_id: source_id.clone(),
                source_index: i,
                sample: k,
                sample_seed: s,
                image: image_rel,
                mask: mask_rel,
                mask_pixels: item.mask.count(),
                empty_mask: item.mask.is_empty(),
                registration_mse_before: item.registration_before,
                registration_mse_after: item.registration_after,
                background_change: item.background_change,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir.join("healthy"))
        .map_err(|e| Error::io("creating healthy dir", e))?;
    let manifest = AugmentManifest {
        generator: generator_label.to_string(),
        config: cfg.clone(),
        items,
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io("writing manifest.json", e))?;
    Ok(manifest)
}

/// Pastes the lesion of a randomly chosen donor onto `x_h` at the donor's
/// location. The one-pixel ring around the mask is blended half and half.
/// Returns the image, the donor mask and the donor index.
pub fn copy_paste_baseline(
    x_h: &Image2D,
    donors: &[(Image2D, BinaryMask2D)],
    rng: &mut impl Rng,
) -> Result<(Image2D, BinaryMask2D, usize)> {
    if donors.is_empty() {
        return Err(Error::EmptyInput("copy-paste needs at least one donor".into()));
    }
    let d = rng.random_range(0..donors.len());
    let (img, mask) = &donors[d];
    Ok((paste_lesion(x_h, img, mask)?, mask.clone(), d))
}

pub fn paste_lesion(x_h: &Image2D, donor: &Image2D, mask: &BinaryMask2D) -> Result<Image2D> {
    if x_h.shape() != donor.shape() || donor.shape() != mask.shape() {
        return Err(Error::ShapeMismatch(format!(
            "target {:?}, donor {:?}, mask {:?}",
            x_h.shape(),
            donor.shape(),
            mask.shape()
        )));
    }
    let ring = dilate(mask, 1);
    let mut out = x_h.clone();
    let (h, w) = x_h.shape();
    for y in 0..h {
        for x in 0..w {
            let alpha = if mask.get(y, x) {
                1.0
            } else if ring.get(y, x) {
                0.5
            } else {
                continue;
            };
            out.set(y, x, (1.0 - alpha) * x_h.get(y, x) + alpha * donor.get(y, x));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::GeneratorArch;
    use crate::phantom::{gen_healthy, gen_pathological, PhantomSpec};

    fn small_gen() -> Generator<f32> {
        let arch = GeneratorArch {
            ngf: 4,
            n_blocks: 1,
            n_masks: 3,
            dropout_rate: 0.5,
        };
        Generator::new(arch, 0.02, &mut rng_for(7, &[])).unwrap()
    }

    #[test]
    fn synthesis_without_dropout_is_deterministic() {
        let gen = small_gen();
        let x = gen_healthy(&PhantomSpec { size: 32, ..Default::default() }, 0).unwrap().image;
        let out = synthesize(&gen, &x, 3, false, 1).unwrap();
        assert!(out.windows(2).all(|w| w[0] == w[1]));
        let on = synthesize(&gen, &x, 2, true, 1).unwrap();
        assert!(on[0].output.mean_abs_diff(&on[1].output) > 0.0);
        assert_eq!(on, synthesize(&gen, &x, 2, true, 1).unwrap());
        assert!(synthesize(&gen, &x, 0, true, 1).is_err());
    }

    #[test]
    fn copy_paste_properties() {
        let spec = PhantomSpec::default();
        let x_h = gen_healthy(&spec, 0).unwrap().image;
        let p = gen_pathological(&spec, 5).unwrap();
        let empty = BinaryMask2D::empty(64, 64);
        assert_eq!(paste_lesion(&x_h, &p.image, &empty).unwrap(), x_h);
        let out = paste_lesion(&x_h, &p.image, &p.lesion).unwrap();
        for (y, x) in p.lesion.points() {
            assert_eq!(out.get(y, x), p.image.get(y, x));
        }
        let (_, mask, d) = copy_paste_baseline(&x_h, &[(p.image.clone(), p.lesion.clone())], &mut rng_for(0, &[])).unwrap();
        assert_eq!((mask, d), (p.lesion.clone(), 0));
    }

    #[test]
    fn copy_paste_lesions_are_recoverable() {
        let spec = PhantomSpec::default();
        let mut total = 0.0;
        for i in 0..6 {
            let x_h = gen_healthy(&spec, i).unwrap().image;
            let p = gen_pathological(&spec, 100 + i).unwrap();
            let out = paste_lesion(&x_h, &p.image, &p.lesion).unwrap();
            let m = extract_mask(&x_h, &out, &MaskExtractConfig::default()).unwrap();
            let inter = m.intersection(&p.lesion).count() as f64;
            total += 2.0 * inter / (m.count() + p.lesion.count()) as f64;
        }
        assert!(total / 6.0 >= 0.8, "mean dice {}", total / 6.0);
    }

    #[test]
    fn background_change_ignores_masked_region() {
        let a = Image2D::filled(16, 16, 0.0);
        let mut b = a.clone();
        b.set(8, 8, 1.0);
        let mut m = BinaryMask2D::empty(16, 16);
        m.set(8, 8, true);
        assert_eq!(background_change(&a, &b, &m, 2), 0.0);
        assert!(background_change(&a, &b, &BinaryMask2D::empty(16, 16), 2) > 0.0);
    }

    #[test]
    fn dataset_build_is_reproducible() {
        let gen = small_gen();
        let spec = PhantomSpec { size: 32, ..Default::default() };
        let healthy: Vec<(String, Image2D)> = (0..2)
            .map(|i| (format!("h{i}"), gen_healthy(&spec, i).unwrap().image))
            .collect();
        let cfg = PipelineConfig {
            k_per_subject: 2,
            ffd: FfdConfig {
                spacings: vec![16, 8],
                steps_per_level: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = build_augmented_dataset(&gen, "g", &healthy, &cfg, a.path()).unwrap();
        let mb = build_augmented_dataset(&gen, "g", &healthy, &cfg, b.path()).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ma.items.len(), 4);
        for f in ["manifest.json", &ma.items[3].image, &ma.items[3].mask] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap()
            );
        }
        let ds = crate::data::load_dataset(a.path(), &Default::default()).unwrap();
        assert_eq!(ds.pathological.len(), 4);
    }
}
