//! Segmentation experiment: the small segmenter trained on subsets of real data,
//! with and without extra (synthetic) pairs, across seeds and training fractions.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::{dice, hausdorff};
use super::segmenter::{train_segmenter, SegmenterConfig};
use crate::data::{BinaryMask2D, Image2D};
use crate::error::{Error, Result};
use crate::rng::{mix, rng_for, stream};

pub type Pair = (Image2D, BinaryMask2D);

pub const BASELINE_ARM: &str = "real";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegExperimentConfig {
    /// Fractions of the real training set, each in (0, 1].
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub segmenter: SegmenterConfig,
    /// Extra pairs added per real training pair in non-baseline arms.
    pub extra_per_real: f64,
}

impl Default for SegExperimentConfig {
    fn default() -> Self {
        Self {
            fractions: vec![1.0, 0.533, 0.266, 0.133],
            seeds: vec![0, 1, 2],
            segmenter: SegmenterConfig::default(),
            extra_per_real: 1.0,
        }
    }
}

impl SegExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidConfig(format!(
                "fractions must lie in (0, 1], got {:?}",
                self.fractions
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if !(self.extra_per_real >= 0.0) {
            return Err(Error::InvalidConfig("extra_per_real must be non-negative".into()));
        }
        self.segmenter.validate()
    }
}

/// An extra training source added on top of the real subset.
#[derive(Debug, Clone, Copy)]
pub struct Arm<'a> {
    pub name: &'a str,
    pub extra: &'a [Pair],
}

/// Per-case scores of one trained segmenter on the shared test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub arm: String,
    pub fraction: f64,
    pub seed: u64,
    pub n_real: usize,
    pub n_extra: usize,
    pub dice: Vec<f64>,
    pub hd95: Vec<Option<f64>>,
    pub hd100: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub fraction: f64,
    pub n_real: usize,
    pub n_extra: usize,
    pub seeds: usize,
    /// Mean and standard deviation over seeds of the per-seed mean test Dice, in percent.
    pub dice_mean: f64,
    pub dice_std: f64,
    pub hd95_mean: Option<f64>,
    pub hd95_std: Option<f64>,
    pub hd100_mean: Option<f64>,
    /// Test cases without a Hausdorff distance (empty prediction or reference).
    pub hd_missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub arm: String,
    pub baseline: String,
    pub fraction: f64,
    /// Paired over (seed, test case).
    pub n_pairs: usize,
    pub dice_diff_mean: f64,
    pub dice_p_value: Option<f64>,
    pub hd95_p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: SegExperimentConfig,
    pub runs: Vec<RunScores>,
    pub summary: Vec<ArmSummary>,
    pub comparisons: Vec<Comparison>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Two-sided paired Student's t-test. `None` with fewer than two pairs; 1 when
/// all differences vanish.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let s = std_dev(&d);
    if s == 0.0 {
        return Some(if m == 0.0 { 1.0 } else { 0.0 });
    }
    let n = d.len() as f64;
    let t = m / (s / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

fn subset(n_total: usize, n: usize, seed: u64, parts: &[u64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_total).collect();
    idx.shuffle(&mut rng_for(seed, parts));
    idx.truncate(n);
    idx
}

/// Number of real training pairs used at `fraction`.
pub fn real_count(n_real: usize, fraction: f64) -> Result<usize> {
    let n = (fraction * n_real as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidConfig(format!(
            "fraction {fraction} of {n_real} real pairs selects no subject"
        )));
    }
    Ok(n.min(n_real))
}

/// Trains one segmenter per (fraction, seed, arm) and scores it on `test`.
/// The baseline arm trains on the real subset alone; every arm in `arms` adds
/// `extra_per_real` extra pairs per real pair. Arms with the same fraction and
/// seed share the real subset and the initialization.
pub fn run_seg_experiment(
    cfg: &SegExperimentConfig,
    real: &[Pair],
    arms: &[Arm],
    test: &[Pair],
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if real.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset("experiment needs real training and test pairs".into()));
    }
    let mut jobs = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        let n = real_count(real.len(), fraction)?;
        for &seed in &cfg.seeds {
            for arm in std::iter::once(None).chain(arms.iter().map(Some)) {
                jobs.push((fi, fraction, n, seed, arm));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(fi, fraction, n, seed, arm)| {
            let real_idx = subset(real.len(), n, seed, &[stream::SEGMENT, fi as u64]);
            let mut train: Vec<Pair> = real_idx.iter().map(|&i| real[i].clone()).collect();
            let name = match arm {
                None => BASELINE_ARM.to_string(),
                Some(a) => {
                    let k = ((n as f64 * cfg.extra_per_real).round() as usize).min(a.extra.len());
                    let idx = subset(a.extra.len(), k, seed, &[stream::SEGMENT, fi as u64, 1]);
                    train.extend(idx.iter().map(|&i| a.extra[i].clone()));
                    a.name.to_string()
                }
            };
            let seg = train_segmenter(&train, &cfg.segmenter, mix(seed, &[fi as u64]))?;
            let mut scores = RunScores {
                arm: name,
                fraction,
                seed,
                n_real: n,
                n_extra: train.len() - n,
                dice: Vec::with_capacity(test.len()),
                hd95: Vec::with_capacity(test.len()),
                hd100: Vec::with_capacity(test.len()),
            };
            for (img, truth) in test {
                let pred = seg.predict(img)?;
                scores.dice.push(dice(&pred, truth)?);
                scores.hd95.push(hausdorff(&pred, truth, 95.0)?);
                scores.hd100.push(hausdorff(&pred, truth, 100.0)?);
            }
            log::info!(
                "{} fraction {fraction} seed {seed}: dice {:.4}",
                scores.arm,
                mean(&scores.dice)
            );
            Ok(scores)
        })
        .collect::<Result<Vec<_>>>()?;
    let arm_names: Vec<String> = std::iter::once(BASELINE_ARM.to_string())
        .chain(arms.iter().map(|a| a.name.to_string()))
        .collect();
    let mut summary = Vec::new();
    let mut comparisons = Vec::new();
    for &fraction in &cfg.fractions {
        let of = |name: &str| -> Vec<&RunScores> {
            runs.iter()
                .filter(|r| r.arm == name && r.fraction == fraction)
                .collect()
        };
        for name in &arm_names {
            let rs = of(name);
            let per_seed: Vec<f64> = rs.iter().map(|r| 100.0 * mean(&r.dice)).collect();
            let hd_seed = |sel: fn(&RunScores) -> &Vec<Option<f64>>| -> Vec<f64> {
                rs.iter()
                    .filter_map(|r| {
                        let v: Vec<f64> = sel(r).iter().flatten().copied().collect();
                        (!v.is_empty()).then(|| mean(&v))
                    })
                    .collect()
            };
            let hd95 = hd_seed(|r| &r.hd95);
            let hd100 = hd_seed(|r| &r.hd100);
            summary.push(ArmSummary {
                arm: name.clone(),
                fraction,
                n_real: rs[0].n_real,
                n_extra: rs[0].n_extra,
                seeds: rs.len(),
                dice_mean: mean(&per_seed),
                dice_std: std_dev(&per_seed),
                hd95_mean: (!hd95.is_empty()).then(|| mean(&hd95)),
                hd95_std: (!hd95.is_empty()).then(|| std_dev(&hd95)),
                hd100_mean: (!hd100.is_empty()).then(|| mean(&hd100)),
                hd_missing: rs.iter().map(|r| r.hd95.iter().filter(|h| h.is_none()).count()).sum(),
            });
        }
        let base = of(BASELINE_ARM);
        let base_dice: Vec<f64> = base.iter().flat_map(|r| r.dice.iter().copied()).collect();
        for name in &arm_names[1..] {
            let rs = of(name);
            let arm_dice: Vec<f64> = rs.iter().flat_map(|r| r.dice.iter().copied()).collect();
            let (mut ha, mut hb) = (Vec::new(), Vec::new());
            for (r, b) in rs.iter().zip(&base) {
                for (x, y) in r.hd95.iter().zip(&b.hd95) {
                    if let (Some(x), Some(y)) = (x, y) {
                        ha.push(*x);
                        hb.push(*y);
                    }
                }
            }
            comparisons.push(Comparison {
                arm: name.clone(),
                baseline: BASELINE_ARM.to_string(),
                fraction,
                n_pairs: arm_dice.len(),
                dice_diff_mean: 100.0 * (mean(&arm_dice) - mean(&base_dice)),
                dice_p_value: paired_t_test(&arm_dice, &base_dice),
                hd95_p_value: paired_t_test(&ha, &hb),
            });
        }
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
        summary,
        comparisons,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// One row per (arm, fraction), plus the paired p-value against the baseline.
pub fn write_table_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e.into()))?;
    let io_err = |e: csv::Error| Error::io("writing csv", e.into());
    w.write_record([
        "arm", "fraction", "n_real", "n_extra", "seeds", "dice_mean", "dice_std", "hd95_mean",
        "hd95_std", "hd100_mean", "hd_missing", "dice_p_value",
    ])
    .map_err(io_err)?;
    for s in &result.summary {
        let p = result
            .comparisons
            .iter()
            .find(|c| c.arm == s.arm && c.fraction == s.fraction)
            .and_then(|c| c.dice_p_value);
        w.write_record([
            s.arm.clone(),
            format!("{}", s.fraction),
            s.n_real.to_string(),
            s.n_extra.to_string(),
            s.seeds.to_string(),
            format!("{:.2}", s.dice_mean),
            format!("{:.2}", s.dice_std),
            opt(s.hd95_mean),
            opt(s.hd95_std),
            opt(s.hd100_mean),
            s.hd_missing.to_string(),
            opt(p),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io("flushing csv", e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_against_reference_values() {
        // differences 1, 2, 3, 4, 5 → t = 3 / (sqrt(2.5) / sqrt(5)) = 4.2426, df 4, p = 0.01324
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let p = paired_t_test(&a, &b).unwrap();
        assert!((p - 0.013236).abs() < 1e-5, "{p}");
        assert_eq!(paired_t_test(&a, &a), Some(1.0));
        assert_eq!(paired_t_test(&a[..1], &b[..1]), None);
    }

    #[test]
    fn zero_subject_fraction_is_an_error() {
        assert!(real_count(3, 0.1).is_err());
        assert_eq!(real_count(15, 0.133).unwrap(), 2);
        assert_eq!(real_count(4, 1.0).unwrap(), 4);
    }

    #[test]
    fn std_dev_is_sample_std() {
        assert!((std_dev(&[1.0, 2.0, 3.0, 4.0]) - 1.2909944).abs() < 1e-6);
        assert_eq!(std_dev(&[3.0]), 0.0);
    }
}
