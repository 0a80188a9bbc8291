use serde::{Deserialize, Serialize};

use crate::data::ops::{boundary, squared_distance_transform};
use crate::data::{BinaryMask2D, Image2D};
use crate::error::{Error, Result};

fn check_shapes(a: &BinaryMask2D, b: &BinaryMask2D) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// 2|a∩b| / (|a|+|b|). Two empty masks agree perfectly and score 1.
pub fn dice(a: &BinaryMask2D, b: &BinaryMask2D) -> Result<f64> {
    check_shapes(a, b)?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        log::debug!("dice of two empty masks, reporting 1");
        return Ok(1.0);
    }
    let inter = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .filter(|(p, q)| **p != 0 && **q != 0)
        .count();
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Nearest-rank percentile (`p` in (0, 100]) of unsorted values.
pub fn nearest_rank(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    values[rank.clamp(1, n) - 1]
}

fn directed(from: &BinaryMask2D, to_sq_dist: &[f64], p: f64) -> f64 {
    let w = from.width();
    let mut d: Vec<f64> = from
        .points()
        .into_iter()
        .map(|(y, x)| to_sq_dist[y * w + x].sqrt())
        .collect();
    nearest_rank(&mut d, p)
}

/// Percentile Hausdorff distance in pixels between the boundaries of `a` and `b`:
/// the larger of the two directed `percentile`-th boundary distances. `None`
/// when either mask is empty.
pub fn hausdorff(a: &BinaryMask2D, b: &BinaryMask2D, percentile: f64) -> Result<Option<f64>> {
    check_shapes(a, b)?;
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidConfig(format!("percentile {percentile} outside (0, 100]")));
    }
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    let ba = boundary(a);
    let bb = boundary(b);
    let da = squared_distance_transform(&ba);
    let db = squared_distance_transform(&bb);
    Ok(Some(directed(&ba, &db, percentile).max(directed(&bb, &da, percentile))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub height: usize,
    pub width: usize,
    /// Fraction of accumulated masks covering each pixel.
    pub values: Vec<f64>,
    pub count: usize,
}

pub fn accumulate_heatmap<'a>(masks: impl IntoIterator<Item = &'a BinaryMask2D>) -> Result<HeatmapGrid> {
    let mut it = masks.into_iter();
    let first = it
        .next()
        .ok_or_else(|| Error::EmptyInput("heatmap of zero masks".into()))?;
    let (h, w) = first.shape();
    let mut values: Vec<f64> = first.pixels().iter().map(|&p| p as f64).collect();
    let mut count = 1;
    for m in it {
        if m.shape() != (h, w) {
            return Err(Error::ShapeMismatch(format!("heatmap mask {:?} vs {:?}", m.shape(), (h, w))));
        }
        for (v, &p) in values.iter_mut().zip(m.pixels()) {
            *v += p as f64;
        }
        count += 1;
    }
    values.iter_mut().for_each(|v| *v /= count as f64);
    Ok(HeatmapGrid {
        height: h,
        width: w,
        values,
        count,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} samples", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    let flat = |s: f64, v: &[f64]| s <= 1e-20 * v.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if flat(saa, a) || flat(sbb, b) {
        return Err(Error::EmptyInput("correlation of a constant map".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Pearson correlation of two maps over the pixels of `region`.
pub fn heatmap_correlation(h1: &[f64], h2: &[f64], region: &BinaryMask2D) -> Result<f64> {
    let n = region.pixels().len();
    if h1.len() != n || h2.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "maps of {} and {} pixels, region of {n}",
            h1.len(),
            h2.len()
        )));
    }
    let idx: Vec<usize> = (0..n).filter(|&i| region.pixels()[i] != 0).collect();
    let a: Vec<f64> = idx.iter().map(|&i| h1[i]).collect();
    let b: Vec<f64> = idx.iter().map(|&i| h2[i]).collect();
    pearson(&a, &b)
}

/// Threshold (in [-1, 1] intensities) separating CSF from tissue on phantoms.
pub const DEFAULT_CSF_THRESHOLD: f32 = -0.4;

/// Dark-pixel area inside `brain` after minus before; positive means enlargement.
pub fn ventricle_area_delta(
    before: &Image2D,
    after: &Image2D,
    brain: &BinaryMask2D,
    csf_threshold: f32,
) -> Result<i64> {
    if before.shape() != after.shape() || before.shape() != brain.shape() {
        return Err(Error::ShapeMismatch(format!(
            "before {:?}, after {:?}, brain {:?}",
            before.shape(),
            after.shape(),
            brain.shape()
        )));
    }
    let area = |img: &Image2D| {
        img.pixels()
            .iter()
            .zip(brain.pixels())
            .filter(|(v, b)| **b != 0 && **v < csf_threshold)
            .count() as i64
    };
    Ok(area(after) - area(before))
}
