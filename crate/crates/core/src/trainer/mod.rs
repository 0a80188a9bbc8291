//! Adversarial training loop: joint generator update, discriminator update on
//! pooled fakes, learning-rate schedule, checkpoints and a JSON-lines log.

mod augment;
mod pool;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{augment_in_training, random_elastic_field, AugmentConfig};
pub use pool::{pool_query, ImagePool};

use crate::data::{io, make_foreground, BinaryMask2D, Image2D, UnpairedDataset};
use crate::error::{Error, Result};
use crate::losses::{self, LossReport, LossWeights};
use crate::networks::checkpoint::{
    load_discriminator, load_generator, save_discriminator, save_generator,
};
use crate::networks::{init_bundles, Bundles, NetworkConfig, BUNDLE_NAMES};
use crate::nn::{Adam, Graph, Var};
use crate::rng::{rng_for, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Last epoch at the initial learning rate; decays linearly to 0 at `epochs`.
    pub decay_start_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weights: LossWeights,
    /// Generator (including mask count `n` and dropout rate) and discriminator shapes.
    pub network: NetworkConfig,
    pub pool_size: usize,
    pub seed: u64,
    pub augmentation: AugmentConfig,
    pub image_size: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            decay_start_epoch: 200,
            batch_size: 1,
            lr: 0.001,
            beta1: 0.5,
            beta2: 0.999,
            weights: LossWeights::default(),
            network: NetworkConfig::default(),
            pool_size: 50,
            seed: 0,
            augmentation: AugmentConfig::default(),
            image_size: 64,
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    /// The 200-epoch desk-scale protocol used for the phantom smoke run.
    pub fn smoke() -> Self {
        Self {
            epochs: 200,
            decay_start_epoch: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.decay_start_epoch > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "decay_start_epoch {} exceeds epochs {}",
                self.decay_start_epoch, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid learning rate {}", self.lr)));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::InvalidConfig("checkpoint_every must be at least 1".into()));
        }
        self.weights.validate()?;
        self.network.generator.validate()?;
        if !crate::data::NETWORK_SIZES.contains(&self.image_size) {
            return Err(Error::InvalidConfig(format!(
                "image_size {} not in {:?}",
                self.image_size,
                crate::data::NETWORK_SIZES
            )));
        }
        self.network.discriminator.output_size(self.image_size)?;
        Ok(())
    }

    /// Learning rate used during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch <= self.decay_start_epoch {
            return self.lr;
        }
        let span = (self.epochs - self.decay_start_epoch) as f64;
        self.lr * (self.epochs.saturating_sub(epoch)) as f64 / span
    }
}

/// One line of `log.jsonl`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub iteration: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Networks plus optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub bundles: Bundles,
    pub opt_g_p: Adam<f32>,
    pub opt_g_h: Adam<f32>,
    pub opt_d_h: Adam<f32>,
    pub opt_d_p: Adam<f32>,
    pub opt_d_f: Adam<f32>,
    /// Last completed epoch.
    pub epoch: usize,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        let bundles = init_bundles(&cfg.network, cfg.seed)?;
        let adam = |p| Adam::new(p, cfg.beta1, cfg.beta2);
        Ok(Self {
            opt_g_p: adam(&bundles.g_p.params),
            opt_g_h: adam(&bundles.g_h.params),
            opt_d_h: adam(&bundles.d_h.params),
            opt_d_p: adam(&bundles.d_p.params),
            opt_d_f: adam(&bundles.d_f.params),
            bundles,
            epoch: 0,
        })
    }
}

pub fn checkpoint_dir(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join("checkpoints").join(format!("epoch_{epoch:04}"))
}

/// Most recent `checkpoints/epoch_XXXX` directory of a run, if any.
pub fn latest_checkpoint(run_dir: &Path) -> Option<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(run_dir.join("checkpoints"))
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("epoch_"))
        })
        .collect();
    dirs.sort();
    dirs.pop()
}

fn bundle_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.safetensors"))
}

pub fn save_checkpoint(dir: &Path, state: &TrainState, seed: u64) -> Result<()> {
    let b = &state.bundles;
    let e = state.epoch;
    save_generator(&bundle_path(dir, "G_P"), "G_P", &b.g_p, Some(&state.opt_g_p), seed, e)?;
    save_generator(&bundle_path(dir, "G_H"), "G_H", &b.g_h, Some(&state.opt_g_h), seed, e)?;
    save_discriminator(&bundle_path(dir, "D_H"), "D_H", &b.d_h, Some(&state.opt_d_h), seed, e)?;
    save_discriminator(&bundle_path(dir, "D_P"), "D_P", &b.d_p, Some(&state.opt_d_p), seed, e)?;
    save_discriminator(&bundle_path(dir, "D_F"), "D_F", &b.d_f, Some(&state.opt_d_f), seed, e)?;
    Ok(())
}

fn missing_optimizer(name: &str) -> Error {
    Error::Checkpoint(format!("{name} checkpoint has no optimizer state"))
}

/// Restores networks, optimizer moments and the epoch counter from a checkpoint directory.
pub fn load_checkpoint(dir: &Path) -> Result<TrainState> {
    let (g_p, o_gp, m) = load_generator(&bundle_path(dir, "G_P"))?;
    let (g_h, o_gh, _) = load_generator(&bundle_path(dir, "G_H"))?;
    let (d_h, o_dh, _) = load_discriminator(&bundle_path(dir, "D_H"))?;
    let (d_p, o_dp, _) = load_discriminator(&bundle_path(dir, "D_P"))?;
    let (d_f, o_df, _) = load_discriminator(&bundle_path(dir, "D_F"))?;
    Ok(TrainState {
        bundles: Bundles {
            g_p,
            g_h,
            d_h,
            d_p,
            d_f,
        },
        opt_g_p: o_gp.ok_or_else(|| missing_optimizer("G_P"))?,
        opt_g_h: o_gh.ok_or_else(|| missing_optimizer("G_H"))?,
        opt_d_h: o_dh.ok_or_else(|| missing_optimizer("D_H"))?,
        opt_d_p: o_dp.ok_or_else(|| missing_optimizer("D_P"))?,
        opt_d_f: o_df.ok_or_else(|| missing_optimizer("D_F"))?,
        epoch: m.epoch,
    })
}

/// Only the generators, for inference.
pub fn load_generators(dir: &Path) -> Result<(crate::networks::Generator, crate::networks::Generator)> {
    let (g_p, _, _) = load_generator(&bundle_path(dir, "G_P"))?;
    let (g_h, _, _) = load_generator(&bundle_path(dir, "G_H"))?;
    Ok((g_p, g_h))
}

/// Index order for one epoch: a fresh permutation of the longer list and
/// back-to-back permutations of the shorter one, both of length max(|H|, |P|).
pub fn epoch_order(n_healthy: usize, n_path: usize, seed: u64, epoch: usize) -> Vec<(usize, usize)> {
    let len = n_healthy.max(n_path);
    let mut rng = rng_for(seed, &[stream::SHUFFLE, epoch as u64]);
    let mut cyclic = |n: usize| {
        let mut out = Vec::with_capacity(len);
        while out.len() < len {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            out.extend(perm);
        }
        out.truncate(len);
        out
    };
    let h = cyclic(n_healthy);
    let p = cyclic(n_path);
    h.into_iter().zip(p).collect()
}

struct Sample {
    x_h: Image2D,
    x_p: Image2D,
    mask: BinaryMask2D,
    x_f: Image2D,
}

struct Pools {
    healthy: ImagePool,
    pathological: ImagePool,
}

fn add_all(g: &mut Graph<f32>, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v);
    }
    acc
}

fn mean_of(g: &mut Graph<f32>, vars: &[Var]) -> Var {
    let s = add_all(g, vars);
    g.scale(s, 1.0 / vars.len() as f64)
}

/// One generator update followed by one discriminator update.
fn train_step(
    state: &mut TrainState,
    cfg: &TrainConfig,
    batch: &[Sample],
    pools: &mut Pools,
    lr: f64,
    dropout_rng: &mut ChaCha8Rng,
    pool_rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    let w = &cfg.weights;
    let b = &state.bundles;
    let use_idt = w.lambda_idt > 0.0 && (w.lambda_h > 0.0 || w.lambda_p > 0.0);

    let mut g = Graph::<f32>::new();
    let (mut t_gh, mut t_gp, mut t_cc, mut t_idt) = (vec![], vec![], vec![], vec![]);
    let mut fakes = Vec::with_capacity(batch.len());
    for s in batch {
        let x_h = g.constant(s.x_h.to_tensor());
        let x_p = g.constant(s.x_p.to_tensor());
        let fake_p = b.g_p.forward(&mut g, x_h, Some(dropout_rng), true)?;
        let rec_h = b.g_h.forward(&mut g, fake_p.output, Some(dropout_rng), true)?;
        let fake_h = b.g_h.forward(&mut g, x_p, Some(dropout_rng), true)?;
        let rec_p = b.g_p.forward(&mut g, fake_h.output, Some(dropout_rng), true)?;
        let d_h_fake = b.d_h.forward(&mut g, fake_h.output, false)?;
        let d_p_fake = b.d_p.forward(&mut g, fake_p.output, false)?;
        let d_f_fake = b.d_f.forward(&mut g, fake_p.o_fore, false)?;
        t_gh.push(losses::gen_healthy(&mut g, d_h_fake)?);
        t_gp.push(losses::gen_pathological(&mut g, d_p_fake, d_f_fake)?);
        t_cc.push(losses::cycle(&mut g, x_h, rec_h.output, x_p, rec_p.output, w)?);
        if use_idt {
            let idt_h = b.g_h.forward(&mut g, x_h, Some(dropout_rng), true)?;
            let idt_p = b.g_p.forward(&mut g, x_p, Some(dropout_rng), true)?;
            t_idt.push(losses::identity(&mut g, x_h, idt_h.output, x_p, idt_p.output, w)?);
        }
        fakes.push((
            Image2D::from_tensor(g.value(fake_h.output)),
            Image2D::from_tensor(g.value(fake_p.output)),
            Image2D::from_tensor(g.value(fake_p.o_fore)),
        ));
    }
    let l_gh = mean_of(&mut g, &t_gh);
    let l_gp = mean_of(&mut g, &t_gp);
    let l_cc = mean_of(&mut g, &t_cc);
    let l_idt = if use_idt {
        mean_of(&mut g, &t_idt)
    } else {
        g.constant(crate::nn::Tensor::scalar(0.0))
    };
    let total = losses::gen_total(&mut g, [l_gh, l_gp, l_cc, l_idt]);
    let mut report = LossReport {
        g_h: g.value(l_gh).item() as f64,
        g_p: g.value(l_gp).item() as f64,
        cc: g.value(l_cc).item() as f64,
        idt: g.value(l_idt).item() as f64,
        g_total: g.value(total).item() as f64,
        ..Default::default()
    };
    if !report.g_total.is_finite() {
        return Ok(report);
    }
    let grads = g.backward(total);
    drop(g);
    let b = &mut state.bundles;
    state.opt_g_p.step(&mut b.g_p.params, &grads, lr);
    state.opt_g_h.step(&mut b.g_h.params, &grads, lr);
    drop(grads);

    let mut g = Graph::<f32>::new();
    let (mut t_dh, mut t_dp, mut t_df) = (vec![], vec![], vec![]);
    for (s, (fake_h, fake_p, o_fore)) in batch.iter().zip(fakes) {
        let fake_h = pools.healthy.query(fake_h, pool_rng);
        let fake_p = pools.pathological.query(fake_p, pool_rng);
        let x_h = g.constant(s.x_h.to_tensor());
        let x_p = g.constant(s.x_p.to_tensor());
        let x_f = g.constant(s.x_f.to_tensor());
        let f_h = g.constant(fake_h.to_tensor());
        let f_p = g.constant(fake_p.to_tensor());
        let f_f = g.constant(o_fore.to_tensor());
        let (rh, fh) = (b.d_h.forward(&mut g, x_h, true)?, b.d_h.forward(&mut g, f_h, true)?);
        let (rp, fp) = (b.d_p.forward(&mut g, x_p, true)?, b.d_p.forward(&mut g, f_p, true)?);
        let (rf, ff) = (b.d_f.forward(&mut g, x_f, true)?, b.d_f.forward(&mut g, f_f, true)?);
        t_dh.push(losses::disc(&mut g, rh, fh)?);
        t_dp.push(losses::disc(&mut g, rp, fp)?);
        t_df.push(losses::disc(&mut g, rf, ff)?);
    }
    let l_dh = mean_of(&mut g, &t_dh);
    let l_dp = mean_of(&mut g, &t_dp);
    let l_df = mean_of(&mut g, &t_df);
    let d_total = add_all(&mut g, &[l_dh, l_dp, l_df]);
    report.d_h = g.value(l_dh).item() as f64;
    report.d_p = g.value(l_dp).item() as f64;
    report.d_f = g.value(l_df).item() as f64;
    if !report.is_finite() {
        return Ok(report);
    }
    let grads = g.backward(d_total);
    state.opt_d_h.step(&mut b.d_h.params, &grads, lr);
    state.opt_d_p.step(&mut b.d_p.params, &grads, lr);
    state.opt_d_f.step(&mut b.d_f.params, &grads, lr);
    // recomputed in f64 so the logged total is exactly the sum of the logged terms
    report.g_total = losses::loss_gen_total(report.g_h, report.g_p, report.cc, report.idt);
    Ok(report)
}

fn dump_batch(out_dir: &Path, epoch: usize, iteration: usize, batch: &[Sample], report: &LossReport) -> PathBuf {
    let dir = out_dir.join(format!("nonfinite_epoch{epoch:04}_iter{iteration:05}"));
    for (k, s) in batch.iter().enumerate() {
        let _ = io::save_image(&dir.join(format!("x_h_{k}.raw")), &s.x_h);
        let _ = io::save_image(&dir.join(format!("x_p_{k}.raw")), &s.x_p);
        let _ = io::save_mask(&dir.join(format!("mask_{k}.png")), &s.mask);
    }
    if let Ok(json) = serde_json::to_vec_pretty(report) {
        let _ = fs::write(dir.join("losses.json"), json);
    }
    dir
}

fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let f = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io("reading log", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Reads a run's `log.jsonl`.
pub fn read_training_log(run_dir: &Path) -> Result<Vec<LogRecord>> {
    read_log(&run_dir.join("log.jsonl"))
}

/// Result of [`train`].
pub struct TrainOutcome {
    pub state: TrainState,
    /// Records written by this invocation.
    pub records: Vec<LogRecord>,
    pub last_checkpoint: PathBuf,
}

/// Trains on `dataset`, writing `checkpoints/`, `log.jsonl` and
/// `config.resolved.json` under `out_dir`. With `resume`, networks, optimizer
/// moments and the epoch counter come from that checkpoint directory; the
/// history pools restart empty.
pub fn train(
    cfg: &TrainConfig,
    dataset: &UnpairedDataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if !dataset.is_trainable() {
        return Err(Error::EmptyDataset(format!(
            "training needs at least one healthy and one pathological image (got {} and {})",
            dataset.healthy.len(),
            dataset.pathological.len()
        )));
    }
    let size = cfg.image_size;
    for img in dataset.healthy.iter().chain(dataset.pathological.iter().map(|p| &p.0)) {
        if img.shape() != (size, size) {
            return Err(Error::ShapeMismatch(format!(
                "dataset image {:?} does not match image_size {size}",
                img.shape()
            )));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    fs::write(out_dir.join("config.resolved.json"), serde_json::to_vec_pretty(cfg)?)
        .map_err(|e| Error::io("writing config.resolved.json", e))?;

    let mut state = match resume {
        Some(dir) => {
            let s = load_checkpoint(dir)?;
            log::info!("resuming from {} at epoch {}", dir.display(), s.epoch);
            s
        }
        None => TrainState::fresh(cfg)?,
    };
    let log_path = out_dir.join("log.jsonl");
    let kept: Vec<LogRecord> = if resume.is_some() && log_path.is_file() {
        read_log(&log_path)?
            .into_iter()
            .filter(|r| r.epoch <= state.epoch)
            .collect()
    } else {
        Vec::new()
    };
    let file = File::create(&log_path).map_err(|e| Error::io("creating log.jsonl", e))?;
    let mut log_out = BufWriter::new(file);
    for r in &kept {
        serde_json::to_writer(&mut log_out, r)?;
        log_out.write_all(b"\n").map_err(|e| Error::io("writing log", e))?;
    }

    let mut pools = Pools {
        healthy: ImagePool::new(cfg.pool_size),
        pathological: ImagePool::new(cfg.pool_size),
    };
    let mut records = Vec::new();
    let mut last_checkpoint = None;
    let n_h = dataset.healthy.len();
    let n_p = dataset.pathological.len();
    for epoch in state.epoch + 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(n_h, n_p, cfg.seed, epoch);
        let started = std::time::Instant::now();
        for (iteration, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let parts = [epoch as u64, iteration as u64];
            let mut aug_rng = rng_for(cfg.seed, &[stream::AUGMENT, parts[0], parts[1]]);
            let mut dropout_rng = rng_for(cfg.seed, &[stream::DROPOUT, parts[0], parts[1]]);
            let mut pool_rng = rng_for(cfg.seed, &[stream::POOL, parts[0], parts[1]]);
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&(hi, pi)| {
                    let (x_h, _) = augment_in_training(&dataset.healthy[hi], None, &cfg.augmentation, &mut aug_rng);
                    let (img, mask) = &dataset.pathological[pi];
                    let (x_p, mask) = augment_in_training(img, Some(mask), &cfg.augmentation, &mut aug_rng);
                    let mask = mask.expect("mask passed through augmentation");
                    let x_f = make_foreground(&x_p, &mask)?;
                    Ok(Sample { x_h, x_p, mask, x_f })
                })
                .collect::<Result<_>>()?;
            let report = train_step(&mut state, cfg, &batch, &mut pools, lr, &mut dropout_rng, &mut pool_rng)?;
            if !report.is_finite() {
                let dir = dump_batch(out_dir, epoch, iteration, &batch, &report);
                let _ = log_out.flush();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    iteration,
                    detail: format!("{report:?}; batch dumped to {}", dir.display()),
                });
            }
            let rec = LogRecord {
                epoch,
                iteration,
                lr,
                losses: report,
            };
            serde_json::to_writer(&mut log_out, &rec)?;
            log_out.write_all(b"\n").map_err(|e| Error::io("writing log", e))?;
            records.push(rec);
        }
        log_out.flush().map_err(|e| Error::io("flushing log", e))?;
        state.epoch = epoch;
        let last = records.last().expect("at least one iteration per epoch");
        log::info!(
            "epoch {epoch}/{} lr {lr:.2e} cycle {:.4} G {:.4} D {:.3}/{:.3}/{:.3} ({:.1}s)",
            cfg.epochs,
            last.losses.cc,
            last.losses.g_total,
            last.losses.d_h,
            last.losses.d_p,
            last.losses.d_f,
            started.elapsed().as_secs_f64()
        );
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            let dir = checkpoint_dir(out_dir, epoch);
            save_checkpoint(&dir, &state, cfg.seed)?;
            last_checkpoint = Some(dir);
        }
    }
    let last_checkpoint = match last_checkpoint {
        Some(d) => d,
        None => {
            // nothing left to train; make sure the final state is on disk
            let dir = checkpoint_dir(out_dir, state.epoch);
            if !bundle_path(&dir, BUNDLE_NAMES[0]).is_file() {
                save_checkpoint(&dir, &state, cfg.seed)?;
            }
            dir
        }
    };
    Ok(TrainOutcome {
        state,
        records,
        last_checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_matches_linear_decay() {
        let cfg = TrainConfig::default();
        for e in [1, 100, 200] {
            assert_eq!(cfg.lr_at(e), 0.001);
        }
        assert!((cfg.lr_at(300) - 0.0005).abs() < 1e-15);
        assert_eq!(cfg.lr_at(400), 0.0);
        assert!(cfg.lr_at(201) < 0.001 && cfg.lr_at(201) > cfg.lr_at(202));
    }

    #[test]
    fn epoch_order_covers_longer_list_once_and_cycles_shorter() {
        let order = epoch_order(3, 7, 1, 1);
        assert_eq!(order.len(), 7);
        let mut p: Vec<usize> = order.iter().map(|o| o.1).collect();
        p.sort();
        assert_eq!(p, (0..7).collect::<Vec<_>>());
        let h: Vec<usize> = order.iter().map(|o| o.0).collect();
        let mut first = h[..3].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2]);
        assert_eq!(order, epoch_order(3, 7, 1, 1));
        assert_ne!(order, epoch_order(3, 7, 1, 2));
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.decay_start_epoch = 500;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
