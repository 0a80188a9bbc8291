use std::path::Path;

use lesionforge::data::UnpairedDataset;
use lesionforge::phantom::{gen_healthy, gen_pathological, healthy_id, pathological_id, PhantomSpec};
use lesionforge::trainer::{
    checkpoint_dir, latest_checkpoint, load_checkpoint, read_training_log, train, TrainConfig,
};
use lesionforge::Error;

fn phantoms(n_h: u64, n_p: u64) -> UnpairedDataset {
    let spec = PhantomSpec {
        size: 32,
        ..Default::default()
    };
    let healthy = (0..n_h)
        .map(|i| (healthy_id(i), gen_healthy(&spec, i).unwrap().image))
        .collect();
    let path = (n_h..n_h + n_p)
        .map(|i| {
            let p = gen_pathological(&spec, i).unwrap();
            (pathological_id(i), p.image, p.lesion)
        })
        .collect();
    UnpairedDataset::new(healthy, path).unwrap()
}

fn tiny(epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs,
        decay_start_epoch: epochs / 2,
        image_size: 32,
        seed: 3,
        ..Default::default()
    };
    cfg.network.generator.n_blocks = 2;
    cfg
}

fn bundle_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn one_epoch_writes_checkpoints_and_log() {
    let ds = phantoms(2, 2);
    let tmp = tempfile::tempdir().unwrap();
    let out = train(&tiny(1), &ds, tmp.path(), None).unwrap();
    assert_eq!(out.last_checkpoint, checkpoint_dir(tmp.path(), 1));
    assert_eq!(
        bundle_files(&out.last_checkpoint),
        ["D_F", "D_H", "D_P", "G_H", "G_P"].map(|n| format!("{n}.safetensors"))
    );
    assert!(tmp.path().join("config.resolved.json").is_file());
    let log = read_training_log(tmp.path()).unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log, out.records);
    for r in &log {
        assert!(r.losses.is_finite());
        let sum = r.losses.g_h + r.losses.g_p + r.losses.cc + r.losses.idt;
        assert!((r.losses.g_total - sum).abs() < 1e-12);
        assert_eq!(r.epoch, 1);
    }
}

#[test]
fn records_per_epoch_follow_longer_cohort_and_batch() {
    let ds = phantoms(2, 5);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        ..tiny(2)
    };
    let out = train(&cfg, &ds, tmp.path(), None).unwrap();
    assert_eq!(out.records.len(), 2 * 3);
    assert_eq!(out.records[5].iteration, 2);
    assert_eq!(out.records[0].lr, cfg.lr);
    assert_eq!(out.records[5].lr, 0.0);
}

#[test]
fn same_seed_same_log() {
    let ds = phantoms(2, 3);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = train(&tiny(2), &ds, a.path(), None).unwrap();
    let rb = train(&tiny(2), &ds, b.path(), None).unwrap();
    assert_eq!(ra.records, rb.records);
    let c = tempfile::tempdir().unwrap();
    let other = TrainConfig { seed: 4, ..tiny(2) };
    let rc = train(&other, &ds, c.path(), None).unwrap();
    assert_ne!(ra.records, rc.records);
}

#[test]
fn resume_continues_the_same_trajectory() {
    // with fewer iterations than the pool capacity the pools only pass fakes
    // through, so dropping them on resume does not change anything
    let ds = phantoms(2, 2);
    let full = tempfile::tempdir().unwrap();
    let straight = train(&tiny(3), &ds, full.path(), None).unwrap();

    let split = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 1,
        ..tiny(3)
    };
    train(&TrainConfig { epochs: 1, decay_start_epoch: 1, ..cfg.clone() }, &ds, split.path(), None)
        .unwrap();
    let ckpt = latest_checkpoint(split.path()).unwrap();
    assert_eq!(load_checkpoint(&ckpt).unwrap().epoch, 1);
    let resumed = train(&cfg, &ds, split.path(), Some(&ckpt)).unwrap();
    assert_eq!(resumed.state.epoch, 3);
    assert_eq!(resumed.records.len(), 4);
    assert_eq!(resumed.records, straight.records[2..]);
    let log = read_training_log(split.path()).unwrap();
    assert_eq!(log, straight.records);
    assert_eq!(latest_checkpoint(split.path()).unwrap(), checkpoint_dir(split.path(), 3));
}

#[test]
fn empty_cohort_is_rejected() {
    let mut ds = phantoms(1, 1);
    ds.healthy.clear();
    let tmp = tempfile::tempdir().unwrap();
    let err = train(&tiny(1), &ds, tmp.path(), None).err().unwrap();
    assert!(matches!(err, Error::EmptyDataset(_)));
    assert!(err.is_usage());
}

#[test]
fn wrong_image_size_is_rejected() {
    let ds = phantoms(1, 1);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        image_size: 64,
        ..tiny(1)
    };
    assert!(matches!(
        train(&cfg, &ds, tmp.path(), None),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn exploding_learning_rate_aborts_with_dump() {
    let ds = phantoms(2, 2);
    let tmp = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        lr: 1e30,
        ..tiny(4)
    };
    match train(&cfg, &ds, tmp.path(), None) {
        Err(Error::NonFiniteLoss { detail, .. }) => {
            let dumps: Vec<_> = std::fs::read_dir(tmp.path())
                .unwrap()
                .filter_map(|e| {
                    let name = e.unwrap().file_name().to_string_lossy().into_owned();
                    name.starts_with("nonfinite_").then_some(name)
                })
                .collect();
            assert_eq!(dumps.len(), 1, "{detail}");
            assert!(tmp.path().join(&dumps[0]).join("x_h_0.raw").is_file());
        }
        other => panic!("expected a non-finite abort, got {:?}", other.map(|o| o.records.len())),
    }
}
