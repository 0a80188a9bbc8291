use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use lesionforge::augment::{build_augmented_dataset, synthesize, PipelineConfig};
use lesionforge::data::{io, load_dataset, preprocess_slice, BinaryMask2D, LoadOptions, Normalization};
use lesionforge::eval::{
    accumulate_heatmap, dice, hausdorff, heatmap_correlation, run_seg_experiment, ventricle_area_delta,
    write_table_csv, Arm, Pair, SegExperimentConfig, DEFAULT_CSF_THRESHOLD,
};
use lesionforge::networks::checkpoint::load_generator;
use lesionforge::phantom::{gen_dataset, PhantomSpec};
use lesionforge::trainer::{train, TrainConfig};
use lesionforge::{Error, Result};

#[derive(Parser)]
#[command(name = "lesionforge", version, about = "Lesion synthesis, augmentation and evaluation on 2D brain slices")]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset.
    PhantomGen(PhantomGenArgs),
    /// Train the generator/discriminator bundle on an unpaired dataset.
    Train(TrainArgs),
    /// Run a trained generator on one image, optionally several dropout samples.
    Synthesize(SynthesizeArgs),
    /// Build an augmented dataset: synthesis, registration and mask extraction.
    Augment(AugmentArgs),
    /// Metrics and the segmentation experiment.
    #[command(subcommand)]
    Evaluate(EvaluateCommand),
}

#[derive(Args)]
struct PhantomGenArgs {
    /// Phantom parameters as JSON; missing fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    healthy: usize,
    #[arg(long)]
    pathological: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Checkpoint directory (checkpoints/epoch_XXXX) to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    decay_start_epoch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Which {
    #[value(name = "G_P")]
    GP,
    #[value(name = "G_H")]
    GH,
}

impl Which {
    fn file(self) -> &'static str {
        match self {
            Which::GP => "G_P.safetensors",
            Which::GH => "G_H.safetensors",
        }
    }
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Generator checkpoint file, or a checkpoint directory together with --generator.
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, value_enum, default_value = "G_P")]
    generator: Which,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    #[arg(long, value_enum, default_value = "on")]
    dropout: Toggle,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Side length the input is resampled to.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    gen: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline settings (registration, mask extraction) as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    dropout: Option<Toggle>,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory of predicted masks (or synthesized images for `ventricle`).
    #[arg(long)]
    pred: PathBuf,
    /// Directory of reference masks (or source images for `ventricle`).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvaluateCommand {
    /// Dice per matching file name.
    Dice(CompareArgs),
    /// 95th percentile and maximum Hausdorff distance per matching file name.
    Hausdorff(CompareArgs),
    /// Lesion-frequency maps of both directories and their correlation.
    Heatmap {
        #[command(flatten)]
        io: CompareArgs,
        /// Mask restricting the correlation; defaults to the whole grid.
        #[arg(long)]
        region: Option<PathBuf>,
    },
    /// Change of dark (CSF) area from --reference images to --pred images.
    Ventricle {
        #[command(flatten)]
        io: CompareArgs,
        /// Directory of brain masks with matching names; defaults to pixels above the background level.
        #[arg(long)]
        brain: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CSF_THRESHOLD)]
        csf_threshold: f32,
    },
    /// Segmenter trained on real data with and without extra data, across fractions and seeds.
    SegExperiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config: Value,
    seeds: Vec<u64>,
    input_hashes: Vec<(String, String)>,
    artifacts: Vec<String>,
    wall_clock_seconds: f64,
    version: String,
}

struct Outcome {
    out_dir: PathBuf,
    config: Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            serde_json::from_slice(&bytes)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))
        }
    }
}

fn files_under(path: &Path) -> Vec<PathBuf> {
    if path.is_file() {
        return vec![path.to_path_buf()];
    }
    let mut out = Vec::new();
    if let Ok(entries) = std::fs::read_dir(path) {
        for e in entries.flatten() {
            out.extend(files_under(&e.path()));
        }
    }
    out.sort();
    out
}

fn sha256_of(path: &Path) -> Option<String> {
    let files = files_under(path);
    if files.is_empty() {
        return None;
    }
    let mut hasher = Sha256::new();
    for f in &files {
        let bytes = std::fs::read(f).ok()?;
        hasher.update(f.strip_prefix(path).unwrap_or(f).to_string_lossy().as_bytes());
        hasher.update(Sha256::digest(&bytes));
    }
    Some(hex::encode(hasher.finalize()))
}

fn load_gen(path: &Path, which: Which) -> Result<lesionforge::networks::Generator> {
    let file = if path.is_dir() {
        path.join(which.file())
    } else {
        path.to_path_buf()
    };
    Ok(load_generator(&file)?.0)
}

fn load_slice(path: &Path, size: usize) -> Result<lesionforge::data::Image2D> {
    preprocess_slice(&io::read_volume(path)?, size, Normalization::Auto)
}

fn phantom_gen(a: &PhantomGenArgs) -> Result<Outcome> {
    let mut spec: PhantomSpec = read_json(a.spec.as_deref())?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(s) = a.size {
        spec.size = s;
    }
    gen_dataset(&spec, a.healthy, a.pathological, &a.out)?;
    Ok(Outcome {
        out_dir: a.out.clone(),
        config: serde_json::to_value(&spec)?,
        seeds: vec![spec.seed],
        inputs: a.spec.iter().cloned().collect(),
        artifacts: vec![a.out.join("healthy"), a.out.join("pathological"), a.out.join("aux")],
    })
}

fn train_cmd(a: &TrainArgs) -> Result<Outcome> {
    let mut cfg: TrainConfig = read_json(a.config.as_deref())?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
        if a.decay_start_epoch.is_none() && cfg.decay_start_epoch > v {
            cfg.decay_start_epoch = v / 2;
        }
    }
    if let Some(v) = a.decay_start_epoch {
        cfg.decay_start_epoch = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    cfg.validate()?;
    let opts = LoadOptions {
        target_size: Some(cfg.image_size),
        ..Default::default()
    };
    let ds = load_dataset(&a.data, &opts)?;
    let out = train(&cfg, &ds, &a.out, a.resume.as_deref())?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.config.iter().cloned());
    inputs.extend(a.resume.iter().cloned());
    Ok(Outcome {
        out_dir: a.out.clone(),
        config: serde_json::to_value(&cfg)?,
        seeds: vec![cfg.seed],
        inputs,
        artifacts: vec![
            out.last_checkpoint,
            a.out.join("log.jsonl"),
            a.out.join("config.resolved.json"),
        ],
    })
}

fn synthesize_cmd(a: &SynthesizeArgs) -> Result<Outcome> {
    let gen = load_gen(&a.gen, a.generator)?;
    let x = load_slice(&a.input, a.size)?;
    let dropout = matches!(a.dropout, Toggle::On);
    let samples = synthesize(&gen, &x, a.samples, dropout, a.seed)?;
    let mut artifacts = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        for (name, img) in [("output", &s.output), ("foreground", &s.o_fore), ("background_attention", &s.a_back)] {
            let p = a.out.join(format!("sample_{k:02}_{name}.raw"));
            io::save_image(&p, img)?;
            artifacts.push(p);
        }
    }
    Ok(Outcome {
        out_dir: a.out.clone(),
        config: json!({
            "generator": a.generator,
            "samples": a.samples,
            "dropout": dropout,
            "size": a.size,
        }),
        seeds: vec![a.seed],
        inputs: vec![a.gen.clone(), a.input.clone()],
        artifacts,
    })
}

fn augment_cmd(a: &AugmentArgs) -> Result<Outcome> {
    let mut cfg: PipelineConfig = read_json(a.config.as_deref())?;
    if let Some(k) = a.k {
        cfg.k_per_subject = k;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = a.dropout {
        cfg.dropout_active = matches!(d, Toggle::On);
    }
    let gen = load_gen(&a.gen, Which::GP)?;
    let opts = LoadOptions {
        target_size: Some(a.size),
        ..Default::default()
    };
    let ds = load_dataset(&a.data, &opts)?;
    let healthy: Vec<_> = ds.healthy_ids.into_iter().zip(ds.healthy).collect();
    let manifest = build_augmented_dataset(&gen, &a.gen.display().to_string(), &healthy, &cfg, &a.out)?;
    Ok(Outcome {
        out_dir: a.out.clone(),
        config: serde_json::to_value(&cfg)?,
        seeds: vec![cfg.seed],
        inputs: vec![a.gen.clone(), a.data.clone()],
        artifacts: std::iter::once(a.out.join("manifest.json"))
            .chain(manifest.items.iter().map(|i| a.out.join(&i.image)))
            .collect(),
    })
}

/// File stems present in both directories, sorted.
fn matched(pred: &Path, reference: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let refs = io::list_images(reference)?;
    let mut out = Vec::new();
    for p in io::list_images(pred)? {
        let stem = io::stem(&p);
        if let Some(r) = refs.iter().find(|r| io::stem(r) == stem) {
            out.push((stem, p, r.clone()));
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no matching file names in {} and {}",
            pred.display(),
            reference.display()
        )));
    }
    Ok(out)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn write_report(path: &Path, report: &Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io("creating report dir", e))?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(report)?).map_err(|e| Error::io("writing report", e))
}

fn report_outcome(io: &CompareArgs, config: Value) -> Outcome {
    Outcome {
        out_dir: io.out.parent().map(Path::to_path_buf).unwrap_or_default(),
        config,
        seeds: Vec::new(),
        inputs: vec![io.pred.clone(), io.reference.clone()],
        artifacts: vec![io.out.clone()],
    }
}

fn evaluate_cmd(cmd: &EvaluateCommand) -> Result<Outcome> {
    match cmd {
        EvaluateCommand::Dice(a) => {
            let mut cases = Vec::new();
            let mut values = Vec::new();
            for (id, p, r) in matched(&a.pred, &a.reference)? {
                let d = dice(&io::load_mask(&p)?, &io::load_mask(&r)?)?;
                values.push(d);
                cases.push(json!({ "id": id, "dice": d }));
            }
            write_report(&a.out, &json!({ "metric": "dice", "mean": mean(&values), "cases": cases }))?;
            Ok(report_outcome(a, json!({ "metric": "dice" })))
        }
        EvaluateCommand::Hausdorff(a) => {
            let mut cases = Vec::new();
            let (mut h95, mut h100, mut missing) = (Vec::new(), Vec::new(), 0);
            for (id, p, r) in matched(&a.pred, &a.reference)? {
                let (pm, rm) = (io::load_mask(&p)?, io::load_mask(&r)?);
                let a95 = hausdorff(&pm, &rm, 95.0)?;
                let a100 = hausdorff(&pm, &rm, 100.0)?;
                match (a95, a100) {
                    (Some(x), Some(y)) => {
                        h95.push(x);
                        h100.push(y);
                    }
                    _ => missing += 1,
                }
                cases.push(json!({ "id": id, "hd95": a95, "hd100": a100 }));
            }
            write_report(
                &a.out,
                &json!({
                    "metric": "hausdorff",
                    "units": "pixels",
                    "hd95_mean": mean(&h95),
                    "hd100_mean": mean(&h100),
                    "missing": missing,
                    "cases": cases,
                }),
            )?;
            Ok(report_outcome(a, json!({ "metric": "hausdorff" })))
        }
        EvaluateCommand::Heatmap { io: a, region } => {
            let load_all = |dir: &Path| -> Result<Vec<BinaryMask2D>> {
                io::list_images(dir)?.iter().map(|p| io::load_mask(p)).collect()
            };
            let pred = accumulate_heatmap(&load_all(&a.pred)?)?;
            let reference = accumulate_heatmap(&load_all(&a.reference)?)?;
            let region = match region {
                Some(p) => io::load_mask(p)?,
                None => BinaryMask2D::from_fn(pred.height, pred.width, |_, _| true),
            };
            let r = heatmap_correlation(&pred.values, &reference.values, &region)?;
            write_report(
                &a.out,
                &json!({ "metric": "heatmap", "pearson_r": r, "pred": pred, "reference": reference }),
            )?;
            Ok(report_outcome(a, json!({ "metric": "heatmap" })))
        }
        EvaluateCommand::Ventricle {
            io: a,
            brain,
            csf_threshold,
        } => {
            let mut cases = Vec::new();
            let mut deltas = Vec::new();
            for (id, p, r) in matched(&a.pred, &a.reference)? {
                let after = io::load_image(&p)?;
                let before = io::load_image(&r)?;
                let brain_mask = match brain {
                    Some(dir) => io::load_mask(&dir.join(format!("{id}.png")))?,
                    None => BinaryMask2D::from_fn(before.height(), before.width(), |y, x| before.get(y, x) > -0.9),
                };
                let d = ventricle_area_delta(&before, &after, &brain_mask, *csf_threshold)?;
                deltas.push(d as f64);
                cases.push(json!({ "id": id, "delta_px": d }));
            }
            write_report(
                &a.out,
                &json!({
                    "metric": "ventricle_area_delta",
                    "csf_threshold": csf_threshold,
                    "mean": mean(&deltas),
                    "cases": cases,
                }),
            )?;
            Ok(report_outcome(a, json!({ "metric": "ventricle", "csf_threshold": csf_threshold })))
        }
        EvaluateCommand::SegExperiment { config, out } => seg_experiment_cmd(config, out),
    }
}

#[derive(serde::Deserialize, Serialize, Default)]
#[serde(default)]
struct SegExperimentFile {
    experiment: SegExperimentConfig,
    /// Dataset directory with the real training pairs.
    real: PathBuf,
    /// Dataset directory with the test pairs.
    test: PathBuf,
    /// Named extra training sources (dataset directories), one arm each.
    extra: Vec<(String, PathBuf)>,
    image_size: Option<usize>,
}

fn pairs(dir: &Path, size: Option<usize>) -> Result<Vec<Pair>> {
    let opts = LoadOptions {
        target_size: size,
        ..Default::default()
    };
    Ok(load_dataset(dir, &opts)?.pathological)
}

fn seg_experiment_cmd(config: &Path, out: &Path) -> Result<Outcome> {
    let file: SegExperimentFile = read_json(Some(config))?;
    let size = Some(file.image_size.unwrap_or(64));
    let real = pairs(&file.real, size)?;
    let test = pairs(&file.test, size)?;
    let extras: Vec<(String, Vec<Pair>)> = file
        .extra
        .iter()
        .map(|(n, d)| Ok((n.clone(), pairs(d, size)?)))
        .collect::<Result<_>>()?;
    let arms: Vec<Arm> = extras
        .iter()
        .map(|(n, e)| Arm { name: n, extra: e })
        .collect();
    let result = run_seg_experiment(&file.experiment, &real, &arms, &test)?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io("creating output dir", e))?;
    }
    write_table_csv(&result, out)?;
    let json_path = out.with_extension("json");
    write_report(&json_path, &serde_json::to_value(&result)?)?;
    let mut inputs = vec![config.to_path_buf(), file.real.clone(), file.test.clone()];
    inputs.extend(file.extra.iter().map(|(_, d)| d.clone()));
    Ok(Outcome {
        out_dir: out.parent().map(Path::to_path_buf).unwrap_or_default(),
        config: serde_json::to_value(&file)?,
        seeds: file.experiment.seeds.clone(),
        inputs,
        artifacts: vec![out.to_path_buf(), json_path],
    })
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::PhantomGen(_) => "phantom-gen",
        Command::Train(_) => "train",
        Command::Synthesize(_) => "synthesize",
        Command::Augment(_) => "augment",
        Command::Evaluate(e) => match e {
            EvaluateCommand::Dice(_) => "evaluate dice",
            EvaluateCommand::Hausdorff(_) => "evaluate hausdorff",
            EvaluateCommand::Heatmap { .. } => "evaluate heatmap",
            EvaluateCommand::Ventricle { .. } => "evaluate ventricle",
            EvaluateCommand::SegExperiment { .. } => "evaluate seg-experiment",
        },
    }
}

fn write_manifest(name: &str, o: &Outcome, started: Instant) -> Result<()> {
    let manifest = RunManifest {
        command: name.to_string(),
        argv: std::env::args().collect(),
        config: o.config.clone(),
        seeds: o.seeds.clone(),
        input_hashes: o
            .inputs
            .iter()
            .filter_map(|p| sha256_of(p).map(|h| (p.display().to_string(), h)))
            .collect(),
        artifacts: o.artifacts.iter().map(|p| p.display().to_string()).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    std::fs::create_dir_all(&o.out_dir).map_err(|e| Error::io("creating output dir", e))?;
    std::fs::write(o.out_dir.join("run_manifest.json"), serde_json::to_vec_pretty(&manifest)?)
        .map_err(|e| Error::io("writing run_manifest.json", e))
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let outcome = match &cli.command {
        Command::PhantomGen(a) => phantom_gen(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Synthesize(a) => synthesize_cmd(a)?,
        Command::Augment(a) => augment_cmd(a)?,
        Command::Evaluate(e) => evaluate_cmd(e)?,
    };
    write_manifest(command_name(&cli.command), &outcome, started)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level)).init();
    if let Some(n) = std::env::var("LESIONFORGE_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
