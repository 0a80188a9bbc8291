//! Synthetic FLAIR-like brain phantoms with exact lesion and ventricle ground truth.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::io;
use crate::data::ops::{dilate, erode, gaussian_blur, squared_distance_transform};
use crate::data::{save_dataset, BinaryMask2D, Image2D, UnpairedDataset};
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

const BACKGROUND: f32 = -1.0;
const WHITE_MATTER: f32 = 0.0;
const CORTEX: f32 = 0.12;
const CSF: f32 = -0.75;
/// exp(-r^2 / 2 sigma^2) = 1/2 at r = sigma * sqrt(2 ln 2)
const HALF_MAX_RATIO: f64 = 1.177_410_022_515_474_6;
/// Minimum distance (px) of a lesion centre from the ventricles and the brain edge.
const LESION_CLEARANCE: f64 = 1.5;

/// Where lesion centres are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LesionPrior {
    /// Gaussian ring around the nominal ventricles. Lengths are pixels at size 64
    /// and scale with the phantom size.
    Periventricular { distance: f64, width: f64 },
    /// Explicit row-major map; it is restricted to white matter and renormalized.
    Map { values: Vec<f64> },
}

impl Default for LesionPrior {
    fn default() -> Self {
        LesionPrior::Periventricular {
            distance: 6.0,
            width: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub size: usize,
    /// Brain ellipse semi-axes (rows, cols) as a fraction of `size`.
    pub brain_axes: [f64; 2],
    /// Semi-axes of each lateral ventricle, fraction of `size`.
    pub ventricle_axes: [f64; 2],
    /// Horizontal offset of each ventricle centre from the midline, fraction of `size`.
    pub ventricle_offset: f64,
    /// Cortical band thickness, fraction of `size`.
    pub cortex_thickness: f64,
    pub wm_texture_amplitude: f64,
    /// Relative jitter of every ellipse axis.
    pub axis_jitter: f64,
    pub brightness_jitter: f64,
    pub bias_amplitude: f64,
    pub lesion_count_range: (usize, usize),
    pub lesion_radius_range: (f64, f64),
    pub lesion_intensity_boost: f64,
    /// Probability that a lesion gets a smaller satellite bump attached.
    pub lesion_satellite_prob: f64,
    pub lesion_prior: LesionPrior,
    /// Ventricle dilation (pixels) applied to pathological subjects.
    pub ventricle_dilation_range: (usize, usize),
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            brain_axes: [0.42, 0.35],
            ventricle_axes: [0.14, 0.05],
            ventricle_offset: 0.07,
            cortex_thickness: 0.07,
            wm_texture_amplitude: 0.03,
            axis_jitter: 0.04,
            brightness_jitter: 0.04,
            bias_amplitude: 0.06,
            lesion_count_range: (4, 8),
            lesion_radius_range: (2.0, 3.5),
            lesion_intensity_boost: 0.6,
            lesion_satellite_prob: 0.3,
            lesion_prior: LesionPrior::default(),
            ventricle_dilation_range: (1, 2),
            seed: 0,
        }
    }
}

/// Output of [`gen_healthy`].
#[derive(Debug, Clone, PartialEq)]
pub struct HealthyPhantom {
    pub image: Image2D,
    pub ventricle: BinaryMask2D,
    pub brain: BinaryMask2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathologicalPhantom {
    pub image: Image2D,
    pub lesion: BinaryMask2D,
    /// Enlarged ventricle mask.
    pub ventricle: BinaryMask2D,
    pub brain: BinaryMask2D,
}

struct Geometry {
    centre: (f64, f64),
    brain: (f64, f64),
    ventricle: (f64, f64),
    offset: f64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::InvalidConfig(format!(
                "phantom size {} is too small",
                self.size
            )));
        }
        if self.ventricle_axes[0] >= self.brain_axes[0]
            || self.ventricle_axes[1] + self.ventricle_offset >= self.brain_axes[1]
        {
            return Err(Error::InvalidConfig(format!(
                "ventricle axes {:?} (offset {}) must lie inside brain axes {:?}",
                self.ventricle_axes, self.ventricle_offset, self.brain_axes
            )));
        }
        if self.brain_axes.iter().any(|&a| a <= 0.0 || a > 0.5)
            || self.ventricle_axes.iter().any(|&a| a <= 0.0)
        {
            return Err(Error::InvalidConfig(
                "ellipse axes must be positive and fit in the field of view".into(),
            ));
        }
        let (lo, hi) = self.lesion_count_range;
        let (rlo, rhi) = self.lesion_radius_range;
        let (dlo, dhi) = self.ventricle_dilation_range;
        if lo > hi || rlo > rhi || rlo <= 0.0 || dlo > dhi {
            return Err(Error::InvalidConfig(
                "ranges must be ordered (min <= max) and radii positive".into(),
            ));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.size as f64 / 64.0
    }

    fn nominal_geometry(&self) -> Geometry {
        let s = self.size as f64;
        let c = (s - 1.0) / 2.0;
        Geometry {
            centre: (c, c),
            brain: (self.brain_axes[0] * s, self.brain_axes[1] * s),
            ventricle: (self.ventricle_axes[0] * s, self.ventricle_axes[1] * s),
            offset: self.ventricle_offset * s,
        }
    }

    fn cortex_px(&self) -> usize {
        (self.cortex_thickness * self.size as f64).round().max(1.0) as usize
    }

    pub fn nominal_brain_mask(&self) -> BinaryMask2D {
        brain_mask(self.size, &self.nominal_geometry())
    }

    pub fn nominal_ventricle_mask(&self) -> BinaryMask2D {
        let g = self.nominal_geometry();
        ventricle_mask(self.size, &g).intersection(&brain_mask(self.size, &g))
    }

    /// White matter of the nominal anatomy: brain minus cortex minus ventricles.
    pub fn white_matter_mask(&self) -> BinaryMask2D {
        erode(&self.nominal_brain_mask(), self.cortex_px()).difference(&self.nominal_ventricle_mask())
    }

    /// Lesion-centre probability map: sums to 1 over white matter, 0 elsewhere.
    pub fn lesion_prior_map(&self) -> Result<Vec<f64>> {
        let wm = self.white_matter_mask();
        let n = self.size * self.size;
        let mut map = match &self.lesion_prior {
            LesionPrior::Periventricular { distance, width } => {
                let d2 = squared_distance_transform(&self.nominal_ventricle_mask());
                let (mu, sd) = (distance * self.scale(), width * self.scale());
                d2.iter()
                    .map(|&q| {
                        let z = (q.sqrt() - mu) / sd;
                        (-0.5 * z * z).exp()
                    })
                    .collect::<Vec<_>>()
            }
            LesionPrior::Map { values } => {
                if values.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "lesion prior map has {} entries, expected {n}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidConfig(
                        "lesion prior values must be finite and non-negative".into(),
                    ));
                }
                values.clone()
            }
        };
        for (v, &m) in map.iter_mut().zip(wm.pixels()) {
            if m == 0 {
                *v = 0.0;
            }
        }
        let total: f64 = map.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::InvalidConfig(
                "lesion prior has zero mass over white matter".into(),
            ));
        }
        map.iter_mut().for_each(|v| *v /= total);
        Ok(map)
    }
}

fn ellipse(size: usize, centre: (f64, f64), axes: (f64, f64)) -> BinaryMask2D {
    BinaryMask2D::from_fn(size, size, |y, x| {
        let dy = (y as f64 - centre.0) / axes.0;
        let dx = (x as f64 - centre.1) / axes.1;
        dy * dy + dx * dx <= 1.0
    })
}

fn brain_mask(size: usize, g: &Geometry) -> BinaryMask2D {
    ellipse(size, g.centre, g.brain)
}

fn ventricle_mask(size: usize, g: &Geometry) -> BinaryMask2D {
    // slightly above centre, like the lateral ventricle bodies on an axial slice
    let cy = g.centre.0 - 0.1 * g.ventricle.0;
    let left = ellipse(size, (cy, g.centre.1 - g.offset), g.ventricle);
    let right = ellipse(size, (cy, g.centre.1 + g.offset), g.ventricle);
    left.union(&right)
}

fn jitter(rng: &mut impl Rng, amount: f64) -> f64 {
    if amount > 0.0 {
        rng.random_range(-amount..=amount)
    } else {
        0.0
    }
}

/// Renders a healthy subject. Deterministic in `(spec.seed, idx)`.
pub fn gen_healthy(spec: &PhantomSpec, idx: u64) -> Result<HealthyPhantom> {
    spec.validate()?;
    let s = spec.size;
    let mut rng = rng_for(spec.seed, &[stream::ANATOMY, idx]);
    let nominal = spec.nominal_geometry();
    let j = spec.axis_jitter;
    let g = Geometry {
        centre: (
            nominal.centre.0 + jitter(&mut rng, 0.5),
            nominal.centre.1 + jitter(&mut rng, 0.5),
        ),
        brain: (
            nominal.brain.0 * (1.0 + jitter(&mut rng, j)),
            nominal.brain.1 * (1.0 + jitter(&mut rng, j)),
        ),
        ventricle: (
            nominal.ventricle.0 * (1.0 + jitter(&mut rng, j)),
            nominal.ventricle.1 * (1.0 + jitter(&mut rng, j)),
        ),
        offset: nominal.offset * (1.0 + jitter(&mut rng, j)),
    };
    let brightness = jitter(&mut rng, spec.brightness_jitter);
    let gy = jitter(&mut rng, spec.bias_amplitude);
    let gx = jitter(&mut rng, spec.bias_amplitude);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);

    let brain = brain_mask(s, &g);
    let ventricle = ventricle_mask(s, &g).intersection(&erode(&brain, spec.cortex_px()));
    let inner = erode(&brain, spec.cortex_px());

    let mut trng = rng_for(spec.seed, &[stream::TEXTURE, idx]);
    let noise = Image2D::from_fn(s, s, |_, _| trng.sample::<f32, _>(StandardNormal));
    let noise = gaussian_blur(&noise, 1.0);
    let sd = (noise.pixels().iter().map(|v| (v * v) as f64).sum::<f64>() / (s * s) as f64)
        .sqrt()
        .max(1e-12);

    let half = s as f64 / 2.0;
    let raw = Image2D::from_fn(s, s, |y, x| {
        if !brain.get(y, x) {
            return BACKGROUND;
        }
        let tissue = if ventricle.get(y, x) {
            CSF
        } else if inner.get(y, x) {
            WHITE_MATTER
        } else {
            CORTEX
        };
        let (ny, nx) = ((y as f64 - half) / half, (x as f64 - half) / half);
        let bias = gy * ny + gx * nx + 0.5 * spec.bias_amplitude * (2.0 * nx + phase).sin() * ny;
        let tex = spec.wm_texture_amplitude * noise.get(y, x) as f64 / sd;
        (tissue as f64 + brightness + bias + tex) as f32
    });
    let mut image = gaussian_blur(&raw, 0.6);
    image.clamp_unit();
    Ok(HealthyPhantom {
        image,
        ventricle,
        brain,
    })
}

/// Dilates the ventricles by a subject-specific 1-2 px (per `ventricle_dilation_range`)
/// and paints the new rim with the subject's CSF level.
pub fn enlarge_ventricles(
    healthy: &HealthyPhantom,
    spec: &PhantomSpec,
    idx: u64,
) -> (Image2D, BinaryMask2D) {
    let mut rng = rng_for(spec.seed, &[stream::VENTRICLE, idx]);
    let (lo, hi) = spec.ventricle_dilation_range;
    let d = rng.random_range(lo..=hi);
    if d == 0 {
        return (healthy.image.clone(), healthy.ventricle.clone());
    }
    let allowed = erode(&healthy.brain, spec.cortex_px());
    let grown = dilate(&healthy.ventricle, d).intersection(&allowed);
    let core = erode(&healthy.ventricle, 1);
    let core = if core.is_empty() {
        healthy.ventricle.clone()
    } else {
        core
    };
    let level = core
        .points()
        .iter()
        .map(|&(y, x)| healthy.image.get(y, x) as f64)
        .sum::<f64>()
        / core.count().max(1) as f64;
    let amp = 0.5 * spec.wm_texture_amplitude;
    let mut image = healthy.image.clone();
    for (y, x) in grown.difference(&healthy.ventricle).points() {
        let n: f64 = rng.sample(StandardNormal);
        image.set(y, x, (level + amp * n).clamp(-1.0, 1.0) as f32);
    }
    (image, grown)
}

/// Adds hyperintense blob lesions drawn from the lesion prior.
///
/// `ventricle` and `brain` must come from the same subject. Centres keep a small
/// clearance from both; mask pixels that would fall in the ventricle or outside
/// the brain are dropped.
pub fn add_lesions(
    image: &Image2D,
    ventricle: &BinaryMask2D,
    brain: &BinaryMask2D,
    spec: &PhantomSpec,
    idx: u64,
) -> Result<(Image2D, BinaryMask2D)> {
    let prior = spec.lesion_prior_map()?;
    let s = spec.size;
    let mut rng = rng_for(spec.seed, &[stream::LESION, idx]);
    let (lo, hi) = spec.lesion_count_range;
    let k = rng.random_range(lo..=hi);
    if k == 0 {
        return Ok((image.clone(), BinaryMask2D::empty(s, s)));
    }
    let vent_d2 = squared_distance_transform(ventricle);
    let outside_d2 = squared_distance_transform(&brain.complement());
    let mut blob = vec![0f64; s * s];
    let mut bump = |cy: f64, cx: f64, r: f64| {
        let sigma = r / HALF_MAX_RATIO;
        let reach = (3.0 * sigma).ceil() as isize + 1;
        let (iy, ix) = (cy.round() as isize, cx.round() as isize);
        for y in (iy - reach).max(0)..=(iy + reach).min(s as isize - 1) {
            for x in (ix - reach).max(0)..=(ix + reach).min(s as isize - 1) {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                blob[y as usize * s + x as usize] += (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    };
    let clearance = LESION_CLEARANCE * LESION_CLEARANCE;
    let weights: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if vent_d2[i] > clearance && outside_d2[i] > clearance {
                p
            } else {
                0.0
            }
        })
        .collect();
    let Ok(sites) = WeightedIndex::new(&weights) else {
        log::warn!("subject {idx}: the lesion prior has no admissible site");
        return Ok((image.clone(), BinaryMask2D::empty(s, s)));
    };
    let (rlo, rhi) = spec.lesion_radius_range;
    for _ in 0..k {
        let r = if rhi > rlo {
            rng.random_range(rlo..=rhi)
        } else {
            rlo
        };
        let i = sites.sample(&mut rng);
        let cy = (i / s) as f64 + jitter(&mut rng, 0.5);
        let cx = (i % s) as f64 + jitter(&mut rng, 0.5);
        bump(cy, cx, r);
        if rng.random_bool(spec.lesion_satellite_prob.clamp(0.0, 1.0)) {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let dist = r * rng.random_range(0.5..1.0);
            bump(
                cy + dist * angle.sin(),
                cx + dist * angle.cos(),
                r * rng.random_range(0.5..0.8),
            );
        }
    }
    let boost = spec.lesion_intensity_boost;
    let mut out = image.clone();
    let mut mask = BinaryMask2D::empty(s, s);
    for y in 0..s {
        for x in 0..s {
            let b = blob[y * s + x];
            if b >= 0.5 && brain.get(y, x) && !ventricle.get(y, x) {
                mask.set(y, x, true);
                let v = out.get(y, x) as f64 + boost * b.min(1.0);
                out.set(y, x, v.clamp(-1.0, 1.0) as f32);
            }
        }
    }
    Ok((out, mask))
}

/// Healthy anatomy of subject `idx` with enlarged ventricles and lesions.
pub fn gen_pathological(spec: &PhantomSpec, idx: u64) -> Result<PathologicalPhantom> {
    let healthy = gen_healthy(spec, idx)?;
    let (enlarged, ventricle) = enlarge_ventricles(&healthy, spec, idx);
    let (image, lesion) = add_lesions(&enlarged, &ventricle, &healthy.brain, spec, idx)?;
    Ok(PathologicalPhantom {
        image,
        lesion,
        ventricle,
        brain: healthy.brain,
    })
}

pub fn healthy_id(idx: u64) -> String {
    format!("h{idx:05}")
}

pub fn pathological_id(idx: u64) -> String {
    format!("p{idx:05}")
}

/// Generates and writes a dataset. Healthy subjects use indices `0..n_healthy`,
/// pathological ones `n_healthy..n_healthy + n_pathological`, so the cohorts never share anatomy.
///
/// Besides the standard layout, `aux/` receives brain and ventricle masks,
/// the resolved spec and the lesion prior.
pub fn gen_dataset(
    spec: &PhantomSpec,
    n_healthy: usize,
    n_pathological: usize,
    out_dir: &Path,
) -> Result<UnpairedDataset> {
    spec.validate()?;
    let prior = spec.lesion_prior_map()?;
    let aux = out_dir.join("aux");
    let mut healthy = Vec::with_capacity(n_healthy);
    for idx in 0..n_healthy as u64 {
        let h = gen_healthy(spec, idx)?;
        let id = healthy_id(idx);
        io::save_mask(&aux.join("brain").join(format!("{id}.png")), &h.brain)?;
        io::save_mask(&aux.join("ventricles").join(format!("{id}.png")), &h.ventricle)?;
        healthy.push((id, h.image));
    }
    let mut pathological = Vec::with_capacity(n_pathological);
    for k in 0..n_pathological as u64 {
        let idx = n_healthy as u64 + k;
        let p = gen_pathological(spec, idx)?;
        let id = pathological_id(idx);
        io::save_mask(&aux.join("brain").join(format!("{id}.png")), &p.brain)?;
        io::save_mask(&aux.join("ventricles").join(format!("{id}.png")), &p.ventricle)?;
        pathological.push((id, p.image, p.lesion));
    }
    let ds = UnpairedDataset::new(healthy, pathological)?;
    save_dataset(out_dir, &ds)?;
    let json = serde_json::to_vec_pretty(spec)?;
    std::fs::write(aux.join("phantom_spec.json"), json)
        .map_err(|e| Error::io("writing phantom spec", e))?;
    let prior_img = Image2D::new(
        spec.size,
        spec.size,
        prior.iter().map(|&v| v as f32).collect(),
    )?;
    io::write_raw(&aux.join("lesion_prior.raw"), &prior_img)?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn healthy_is_deterministic() {
        let spec = PhantomSpec::default();
        assert_eq!(gen_healthy(&spec, 3).unwrap(), gen_healthy(&spec, 3).unwrap());
        assert_ne!(
            gen_healthy(&spec, 3).unwrap().image,
            gen_healthy(&spec, 4).unwrap().image
        );
    }

    #[test]
    fn ventricles_inside_brain_and_darker_than_white_matter() {
        let spec = PhantomSpec::default();
        for idx in 0..20 {
            let h = gen_healthy(&spec, idx).unwrap();
            assert!(h.ventricle.is_subset_of(&h.brain));
            assert!(!h.ventricle.is_empty());
            let band = dilate(&h.ventricle, 3).difference(&dilate(&h.ventricle, 1));
            let mean = |m: &BinaryMask2D| {
                m.points()
                    .iter()
                    .map(|&(y, x)| h.image.get(y, x) as f64)
                    .sum::<f64>()
                    / m.count() as f64
            };
            assert!(mean(&h.ventricle) < mean(&band) - 0.3);
            assert!(h.image.pixels().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn ventricle_larger_than_brain_is_rejected() {
        let spec = PhantomSpec {
            ventricle_axes: [0.45, 0.05],
            ..Default::default()
        };
        assert!(matches!(gen_healthy(&spec, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn zero_lesions_leaves_image_unchanged() {
        let spec = PhantomSpec {
            lesion_count_range: (0, 0),
            ..Default::default()
        };
        let h = gen_healthy(&spec, 1).unwrap();
        let (img, mask) = add_lesions(&h.image, &h.ventricle, &h.brain, &spec, 1).unwrap();
        assert_eq!(img, h.image);
        assert!(mask.is_empty());
    }

    #[test]
    fn lesions_are_hyperintense_and_avoid_ventricles() {
        let spec = PhantomSpec::default();
        for idx in 0..30 {
            let h = gen_healthy(&spec, idx).unwrap();
            let (enl, vent) = enlarge_ventricles(&h, &spec, idx);
            assert!(h.ventricle.is_subset_of(&vent));
            let (img, mask) = add_lesions(&enl, &vent, &h.brain, &spec, idx).unwrap();
            assert!(!mask.is_empty());
            assert!(mask.is_subset_of(&h.brain));
            assert!(mask.intersection(&vent).is_empty());
            for (y, x) in mask.points() {
                assert!(img.get(y, x) >= enl.get(y, x));
            }
            // outside the mask nothing changes
            for (y, x) in mask.complement().points() {
                assert_eq!(img.get(y, x), enl.get(y, x));
            }
        }
    }

    #[test]
    fn mean_lesion_contrast_matches_profile_integral() {
        // single isolated bump: the profile exp(-d^2/2s^2) over its half-max disk
        // averages to 1 / (2 ln 2) in the continuum
        let expected_profile = 1.0 / (2.0 * std::f64::consts::LN_2);
        let spec = PhantomSpec {
            size: 128,
            lesion_count_range: (1, 1),
            lesion_radius_range: (4.0, 4.0),
            lesion_satellite_prob: 0.0,
            ..Default::default()
        };
        let mut total = 0.0;
        let mut px = 0usize;
        for idx in 0..40 {
            let h = gen_healthy(&spec, idx).unwrap();
            let (img, mask) = add_lesions(&h.image, &h.ventricle, &h.brain, &spec, idx).unwrap();
            for (y, x) in mask.points() {
                total += (img.get(y, x) - h.image.get(y, x)) as f64;
                px += 1;
            }
        }
        let measured = total / px as f64;
        let want = spec.lesion_intensity_boost * expected_profile;
        assert!(
            (measured - want).abs() <= 0.1 * want,
            "measured {measured}, expected {want}"
        );
    }

    #[test]
    fn prior_sums_to_one_over_white_matter() {
        let spec = PhantomSpec::default();
        let p = spec.lesion_prior_map().unwrap();
        let wm = spec.white_matter_mask();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (v, &m) in p.iter().zip(wm.pixels()) {
            if m == 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn zero_mass_prior_is_an_error() {
        let spec = PhantomSpec {
            lesion_prior: LesionPrior::Map {
                values: vec![0.0; 64 * 64],
            },
            ..Default::default()
        };
        let h = gen_healthy(&spec, 0).unwrap();
        assert!(matches!(
            add_lesions(&h.image, &h.ventricle, &h.brain, &spec, 0),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn lesion_heatmap_tracks_prior() {
        let spec = PhantomSpec::default();
        let brain = spec.nominal_brain_mask();
        let mut heat = vec![0f64; 64 * 64];
        for idx in 0..240 {
            let p = gen_pathological(&spec, 1000 + idx).unwrap();
            for (i, &m) in p.lesion.pixels().iter().enumerate() {
                heat[i] += m as f64;
            }
        }
        let prior = spec.lesion_prior_map().unwrap();
        let idx: Vec<usize> = (0..64 * 64).filter(|&i| brain.pixels()[i] == 1).collect();
        let a: Vec<f64> = idx.iter().map(|&i| heat[i]).collect();
        let b: Vec<f64> = idx.iter().map(|&i| prior[i]).collect();
        let r = pearson(&a, &b);
        assert!(r >= 0.9, "heatmap/prior correlation {r}");
    }

    #[test]
    fn dataset_cohorts_are_disjoint_and_healthy_is_lesion_free() {
        let dir = tempfile::tempdir().unwrap();
        let spec = PhantomSpec::default();
        let ds = gen_dataset(&spec, 3, 2, dir.path()).unwrap();
        assert_eq!(ds.healthy.len(), 3);
        assert_eq!(ds.pathological.len(), 2);
        for id in &ds.pathological_ids {
            assert!(!ds.healthy_ids.contains(&id.replacen('p', "h", 1)));
        }
        let loaded =
            crate::data::load_dataset(dir.path(), &crate::data::LoadOptions::default()).unwrap();
        assert_eq!(loaded.healthy, ds.healthy);
        assert_eq!(loaded.pathological, ds.pathological);
        assert!(dir.path().join("aux/ventricles/p00003.png").is_file());
        for img in &ds.healthy {
            assert!(img.check_network_size().is_ok());
        }
    }
}
