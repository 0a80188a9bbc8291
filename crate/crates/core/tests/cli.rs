use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lesionforge"))
        .args(args)
        .env("LESIONFORGE_NUM_WORKERS", "1")
        .output()
        .expect("binary runs")
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("run_manifest.json")).unwrap()).unwrap()
}

fn count(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn phantom_gen_writes_cohorts_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ph");
    let o = run(&[
        "phantom-gen",
        "--healthy",
        "4",
        "--pathological",
        "4",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "7",
        "--size",
        "32",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count(&out.join("pathological/masks")), 4);
    // raw images carry sidecar headers, so count subjects through the loader
    let ds = lesionforge::data::load_dataset(&out, &Default::default()).unwrap();
    assert_eq!((ds.healthy.len(), ds.pathological.len()), (4, 4));
    let m = manifest(&out);
    assert_eq!(m["command"], "phantom-gen");
    assert_eq!(m["seeds"][0], 7);
    assert_eq!(m["config"]["size"], 32);
    assert!(m["version"].is_string());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["phantom-gen", "--healthy", "1", "--pathological", "1", "--out", "/tmp/x", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn training_on_empty_directory_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(data.join("healthy")).unwrap();
    std::fs::create_dir_all(data.join("pathological/images")).unwrap();
    std::fs::create_dir_all(data.join("pathological/masks")).unwrap();
    let o = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        tmp.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("empty dataset"));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&[
        "evaluate",
        "dice",
        "--pred",
        tmp.path().join("nope").to_str().unwrap(),
        "--reference",
        tmp.path().to_str().unwrap(),
        "--out",
        tmp.path().join("r.json").to_str().unwrap(),
    ]);
    assert!(!o.status.success());
}

#[test]
fn train_synthesize_augment_and_evaluate_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    let ok = |o: Output| assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    ok(run(&[
        "phantom-gen", "--healthy", "2", "--pathological", "2", "--out", &p("data"), "--size", "32",
    ]));
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{"image_size": 32, "epochs": 5, "network": {"generator": {"n_blocks": 1, "n_masks": 3}}}"#,
    )
    .unwrap();
    ok(run(&[
        "train", "--config", &p("cfg.json"), "--data", &p("data"), "--out", &p("run"), "--epochs", "1", "--seed",
        "4",
    ]));
    let m = manifest(&tmp.path().join("run"));
    assert_eq!(m["config"]["epochs"], 1);
    assert_eq!(m["config"]["image_size"], 32);
    assert_eq!(m["seeds"][0], 4);
    assert!(m["input_hashes"].as_array().unwrap().iter().all(|h| h[1].as_str().unwrap().len() == 64));
    let ckpt = p("run/checkpoints/epoch_0001");
    let src = std::fs::read_dir(tmp.path().join("data/healthy"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "raw"))
        .unwrap();
    ok(run(&[
        "synthesize", "--gen", &ckpt, "--in", src.to_str().unwrap(), "--out", &p("syn"), "--samples", "2",
        "--size", "32",
    ]));
    assert!(tmp.path().join("syn/sample_01_output.raw").exists());
    ok(run(&["augment", "--gen", &ckpt, "--data", &p("data"), "--out", &p("aug"), "--k", "2", "--size", "32"]));
    let aug = lesionforge::data::load_dataset(&tmp.path().join("aug"), &Default::default()).unwrap();
    assert_eq!(aug.pathological.len(), 4);
    let masks = p("data/pathological/masks");
    ok(run(&["evaluate", "dice", "--pred", &masks, "--reference", &masks, "--out", &p("dice.json")]));
    let report: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("dice.json")).unwrap()).unwrap();
    assert_eq!(report["mean"], 1.0);
    ok(run(&["evaluate", "hausdorff", "--pred", &masks, "--reference", &masks, "--out", &p("hd.json")]));
    let report: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("hd.json")).unwrap()).unwrap();
    assert_eq!(report["hd100_mean"], 0.0);
}
