//! The subcommands. Each takes a resolved [`RunConfig`] and writes only
//! below its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use infomax3d::data::{
    read_volume, stratified_split, write_dataset, Assignment, AugmentationConfig, Dataset, Manifest, SplitPlan,
    SyntheticConfig, NUM_CLASSES,
};
use infomax3d::dim::{Estimator, StatisticsNetworks};
use infomax3d::encoders::{build_encoder, load_checkpoint, save_checkpoint, ActShape, Encoder, Preset, Tap};
use infomax3d::evaluation::{aggregate, compare_models, MetricsRecord, Report, StdKind};
use infomax3d::gradsuite::{run_suite, OpReport, SUITE};
use infomax3d::trainer::{
    evaluate_classifier, evaluate_probe, pretrain_dim, train_probe, train_supervised, JsonlSink, TrainConfig,
};
use infomax3d::{DType, Scalar};

use crate::config::{key, required, KeySpec, RunConfig};
use crate::NumericalFailure;

pub const SNAPSHOT: &str = "config.snapshot";
pub const METRICS: &str = "metrics.jsonl";
pub const REPORT: &str = "report.csv";
pub const SPLIT: &str = "split.csv";
pub const CKPT: &str = "ckpt";
pub const MANIFEST: &str = "manifest.csv";

pub struct CommandSpec {
    pub name: &'static str,
    pub about: &'static str,
    pub keys: &'static [KeySpec],
}

pub const SYNTH_KEYS: &[KeySpec] = &[
    required("out", "dataset directory to create"),
    key("side", "32", "cube side length in voxels"),
    key("per_class", "50", "volumes per class, one number or four comma-separated"),
    key("seed", "0", "random seed"),
    key("noise", "0.2", "standard deviation of the background noise"),
];

macro_rules! run_keys {
    ($($extra:expr),* $(,)?) => {
        &[
            required("data", "dataset directory holding manifest.csv"),
            required("out", "run directory"),
            key("seed", "0", "seed for the split, initialization and batching"),
            key("holdout", "0.07", "stratified holdout fraction"),
            key("folds", "5", "number of cross-validation folds"),
            key("fold", "all", "fold to run, or `all`"),
            key("dtype", "f32", "f32 or f64"),
            key("side", "auto", "input cube side; `auto` uses the preset's, or the data's for mini presets"),
            key("augment", "true", "random crop and flip augmentation"),
            key("canonical", "false", "write null wall times so reruns are byte-identical"),
            key("batch_size", "8", "minibatch size"),
            key("drop_last", "true", "drop the last incomplete batch"),
            key("lambda_l1", "0", "L1 weight on all parameters"),
            $($extra),*
        ]
    };
}

pub const TRAIN_KEYS: &[KeySpec] = run_keys![
    key("preset", "alexnet_mini", "alexnet, resnet, alexnet_mini or resnet_mini"),
    key("epochs", "500", "training epochs"),
    key("lr", "0.001", "learning rate"),
    key("burn_in", "50", "epochs excluded from checkpoint selection"),
];

pub const PRETRAIN_KEYS: &[KeySpec] = run_keys![
    key("preset", "dim_alexnet_mini", "dim_alexnet or dim_alexnet_mini"),
    key("estimator", "jsd", "jsd or nce"),
    key("epochs", "1000", "pretraining epochs"),
    key("lr", "0.0001", "learning rate"),
    key("ss", "false", "jointly train a classifier on the representation"),
    key("ss_weight", "1", "weight of the classifier loss"),
    key("embed_dim", "512", "statistics network embedding width"),
];

/// Data, split, preset and dtype come from the pretraining snapshot.
pub const PROBE_KEYS: &[KeySpec] = &[
    required("pretrained", "pretraining run directory"),
    required("out", "run directory"),
    key("fold", "all", "fold to run, or `all`"),
    key("canonical", "false", "write null wall times so reruns are byte-identical"),
    key("tap", "z", "feature tap: conv, fc or z"),
    key("checkpoint", "final", "pretrained encoder to load: final or best"),
    key("epochs", "1000", "probe epochs"),
    key("lr", "0.001", "learning rate"),
    key("batch_size", "8", "minibatch size"),
    key("drop_last", "true", "drop the last incomplete batch"),
    key("lambda_l1", "0", "L1 weight on the probe"),
    key("burn_in", "50", "epochs excluded from checkpoint selection"),
];

pub const EVAL_KEYS: &[KeySpec] = &[
    required("run", "train or probe run directory"),
    key("folds", "5", "number of folds to aggregate"),
    key("std", "sample", "sample or population standard deviation"),
    key("name", "", "model name in the table (default: directory name)"),
];

pub const COMPARE_KEYS: &[KeySpec] = &[
    KeySpec {
        name: "model",
        default: None,
        help: "NAME=RUN_DIR, repeated once per model",
        multi: true,
        hidden: false,
    },
    key("folds", "5", "number of folds per model"),
    key("std", "sample", "sample or population standard deviation"),
    key("out", "", "directory for report.csv (default: print only)"),
];

pub const GRADCHECK_KEYS: &[KeySpec] = &[
    key("ops", "all", "comma-separated ops, or `all`"),
    key("seeds", "20", "random points per op"),
    KeySpec {
        name: "inject_fault",
        default: Some(""),
        help: "perturb the analytic gradient of this op",
        multi: false,
        hidden: true,
    },
];

pub const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "synth",
        about: "Generate the synthetic four-class volume dataset",
        keys: SYNTH_KEYS,
    },
    CommandSpec {
        name: "train",
        about: "Supervised training of a classification preset",
        keys: TRAIN_KEYS,
    },
    CommandSpec {
        name: "pretrain",
        about: "Local DIM pretraining of an encoder",
        keys: PRETRAIN_KEYS,
    },
    CommandSpec {
        name: "probe",
        about: "Train a classifier on frozen pretrained features",
        keys: PROBE_KEYS,
    },
    CommandSpec {
        name: "eval",
        about: "Aggregate the per-fold scores of one run",
        keys: EVAL_KEYS,
    },
    CommandSpec {
        name: "compare",
        about: "Table of several runs with Wilcoxon tests against the best",
        keys: COMPARE_KEYS,
    },
    CommandSpec {
        name: "gradcheck",
        about: "Finite-difference check of every differentiable op",
        keys: GRADCHECK_KEYS,
    },
];

pub fn command_spec(name: &str) -> Option<&'static CommandSpec> {
    COMMANDS.iter().find(|c| c.name == name)
}

/// One row of a fold's `report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldScore {
    pub fold: usize,
    pub selected_epoch: Option<usize>,
    pub cv: f64,
    pub holdout: f64,
}

const FOLD_HEADER: &str = "fold,selected_epoch,cv_balanced_accuracy,holdout_balanced_accuracy";

impl FoldScore {
    pub fn to_csv(&self) -> String {
        let epoch = self.selected_epoch.map_or(String::new(), |e| e.to_string());
        format!("{FOLD_HEADER}\n{},{epoch},{},{}\n", self.fold, self.cv, self.holdout)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(FOLD_HEADER) {
            bail!("not a fold report (expected header `{FOLD_HEADER}`)");
        }
        let row = lines.next().ok_or_else(|| anyhow!("fold report has no row"))?;
        let f: Vec<&str> = row.split(',').collect();
        if f.len() != 4 {
            bail!("fold report row `{row}` needs 4 fields");
        }
        Ok(Self {
            fold: f[0].parse()?,
            selected_epoch: if f[1].is_empty() { None } else { Some(f[1].parse()?) },
            cv: f[2].parse()?,
            holdout: f[3].parse()?,
        })
    }
}

pub fn fold_dir(run: &Path, k: usize) -> PathBuf {
    run.join(format!("fold{k}"))
}

// ---------------------------------------------------------------- synth

pub fn synth(cfg: &RunConfig) -> Result<Manifest> {
    let out = PathBuf::from(cfg.get("out")?);
    let per: Vec<usize> = cfg
        .get("per_class")?
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .context("config key `per_class`")?;
    let n_per_class: [usize; NUM_CLASSES] = match per.as_slice() {
        [n] => [*n; NUM_CLASSES],
        [a, b, c, d] => [*a, *b, *c, *d],
        _ => bail!("config key `per_class` takes one or {NUM_CLASSES} counts"),
    };
    let mut sc = SyntheticConfig::new(n_per_class, cfg.parse_as("side")?, cfg.parse_as("seed")?);
    sc.noise_std = cfg.parse_as("noise")?;
    let volumes = infomax3d::data::generate_synthetic(&sc)?;
    fs::create_dir_all(&out)?;
    let manifest = write_dataset(&out, &volumes)?;
    fs::write(out.join(SNAPSHOT), cfg.snapshot())?;
    Ok(manifest)
}

// ---------------------------------------------------------------- shared run setup

struct Setup {
    out: PathBuf,
    manifest: Manifest,
    plan: SplitPlan,
    folds: Vec<usize>,
    side: usize,
    augment: bool,
    seed: u64,
    canonical: bool,
}

fn plan_from_manifest(manifest: &Manifest, holdout: f64, folds: usize, seed: u64) -> Result<SplitPlan> {
    let given: Option<Vec<Assignment>> = manifest.records.iter().map(|r| r.split).collect();
    match given {
        Some(assignment) => {
            let n_folds = assignment
                .iter()
                .filter_map(|a| match a {
                    Assignment::Fold(k) => Some(k + 1),
                    Assignment::Holdout => None,
                })
                .max()
                .unwrap_or(0);
            let n_hold = assignment.iter().filter(|a| **a == Assignment::Holdout).count();
            Ok(SplitPlan {
                holdout_fraction: n_hold as f64 / assignment.len() as f64,
                n_folds,
                seed,
                assignment,
            })
        }
        None => Ok(stratified_split(&manifest.labels(), holdout, folds, seed)?),
    }
}

fn parse_folds(raw: &str, n_folds: usize) -> Result<Vec<usize>> {
    if raw == "all" {
        return Ok((0..n_folds).collect());
    }
    let k: usize = raw.parse().map_err(|_| anyhow!("config key `fold` = `{raw}`: expected a number or `all`"))?;
    if k >= n_folds {
        bail!("fold {k} out of range for {n_folds} folds");
    }
    Ok(vec![k])
}

fn resolve_side(raw: &str, preset: Preset, data: &Path, manifest: &Manifest) -> Result<usize> {
    if raw != "auto" {
        return raw.parse().map_err(|_| anyhow!("config key `side` = `{raw}`: expected a number or `auto`"));
    }
    if preset.canonical_side() == 128 {
        return Ok(128);
    }
    let first = manifest.records.first().ok_or_else(|| anyhow!("manifest is empty"))?;
    let v = read_volume(&data.join(&first.path))?;
    Ok(v.dims.into_iter().max().unwrap_or(0))
}

impl Setup {
    /// Loads the manifest, fixes the split and writes the run-level files.
    fn new(cfg: &RunConfig, preset: Preset) -> Result<Self> {
        let data = PathBuf::from(cfg.get("data")?);
        let manifest_path = data.join(MANIFEST);
        if !manifest_path.is_file() {
            bail!("missing input: {}", manifest_path.display());
        }
        let manifest = Manifest::load(&manifest_path)?;
        let seed: u64 = cfg.parse_as("seed")?;
        let plan = plan_from_manifest(&manifest, cfg.parse_as("holdout")?, cfg.parse_as("folds")?, seed)?;
        if plan.holdout().is_empty() {
            bail!("the holdout split is empty");
        }
        let folds = parse_folds(cfg.get("fold")?, plan.n_folds)?;
        let side = resolve_side(cfg.get("side")?, preset, &data, &manifest)?;
        let out = PathBuf::from(cfg.get("out")?);
        fs::create_dir_all(&out)?;
        fs::write(out.join(SNAPSHOT), cfg.snapshot())?;
        fs::write(out.join(SPLIT), plan.to_csv(&manifest))?;
        Ok(Self {
            out,
            manifest,
            plan,
            folds,
            side,
            augment: cfg.flag("augment")?,
            seed,
            canonical: cfg.flag("canonical")?,
        })
    }

    fn dataset<T: Scalar>(&self, data: &Path) -> Result<Dataset<T>> {
        let aug = if self.augment {
            AugmentationConfig::new(self.side)
        } else {
            AugmentationConfig::disabled(self.side)
        };
        Ok(Dataset::load(&self.manifest, data, aug)?)
    }

    fn fold_output(&self, k: usize) -> Result<(PathBuf, JsonlSink)> {
        let dir = fold_dir(&self.out, k);
        fs::create_dir_all(dir.join(CKPT))?;
        let sink = JsonlSink::create(&dir.join(METRICS), self.canonical)?;
        Ok((dir, sink))
    }

    fn fold_seed(&self, k: usize) -> u64 {
        self.seed.wrapping_add(k as u64)
    }
}

fn train_config(cfg: &RunConfig, seed: u64) -> Result<TrainConfig> {
    let burn_in = if cfg.get("burn_in").is_ok() { cfg.parse_as("burn_in")? } else { 0 };
    let ss_weight = if cfg.get("ss_weight").is_ok() { cfg.parse_as("ss_weight")? } else { 0.0 };
    let tc = TrainConfig {
        learning_rate: cfg.parse_as("lr")?,
        batch_size: cfg.parse_as("batch_size")?,
        drop_last: cfg.flag("drop_last")?,
        epochs: cfg.parse_as("epochs")?,
        lambda_l1: cfg.parse_as("lambda_l1")?,
        ss_weight,
        burn_in_epochs: burn_in,
        seed,
    };
    tc.validate(2)?;
    Ok(tc)
}

fn dtype(cfg: &RunConfig) -> Result<DType> {
    match cfg.get("dtype")? {
        "f32" => Ok(DType::F32),
        "f64" => Ok(DType::F64),
        other => bail!("config key `dtype` = `{other}`: expected f32 or f64"),
    }
}

fn write_fold_score(dir: &Path, score: &FoldScore) -> Result<()> {
    fs::write(dir.join(REPORT), score.to_csv())?;
    Ok(())
}

// ---------------------------------------------------------------- train

pub fn train(cfg: &RunConfig) -> Result<Vec<FoldScore>> {
    match dtype(cfg)? {
        DType::F32 => train_as::<f32>(cfg),
        DType::F64 => train_as::<f64>(cfg),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig) -> Result<Vec<FoldScore>> {
    let preset: Preset = cfg.parse_as("preset")?;
    if preset.is_dim() {
        bail!("preset {preset} has no classifier; use `pretrain`");
    }
    let setup = Setup::new(cfg, preset)?;
    let data = setup.dataset::<T>(Path::new(cfg.get("data")?))?;
    let holdout = setup.plan.holdout();
    let mut scores = Vec::new();
    for &k in &setup.folds {
        let (dir, mut sink) = setup.fold_output(k)?;
        let tc = train_config(cfg, setup.fold_seed(k))?;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut encoder = build_encoder::<T, _>(preset, setup.side, setup.manifest.num_classes(), &mut rng)?;
        let (train, val) = (setup.plan.train_for(k), setup.plan.fold(k));
        let outcome = train_supervised(&mut encoder, &data, &train, &val, &tc, &mut sink)?;
        save_checkpoint(&dir.join(CKPT).join("final.ckpt"), &encoder.params)?;
        encoder.params = outcome.selected;
        save_checkpoint(&dir.join(CKPT).join("model.ckpt"), &encoder.params)?;
        let score = FoldScore {
            fold: k,
            selected_epoch: outcome.selection.map(|s| s.checkpoint.epoch),
            cv: evaluate_classifier(&mut encoder, &data, &val)?.1,
            holdout: evaluate_classifier(&mut encoder, &data, &holdout)?.1,
        };
        write_fold_score(&dir, &score)?;
        scores.push(score);
    }
    Ok(scores)
}

// ---------------------------------------------------------------- pretrain

/// Per-fold summary of a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainSummary {
    pub fold: usize,
    pub best_epoch: Option<usize>,
    pub epoch_objectives: Vec<f64>,
    pub step_objectives: Vec<f64>,
}

pub fn pretrain(cfg: &RunConfig) -> Result<Vec<PretrainSummary>> {
    match dtype(cfg)? {
        DType::F32 => pretrain_as::<f32>(cfg),
        DType::F64 => pretrain_as::<f64>(cfg),
    }
}

fn local_channels(encoder_spec: &infomax3d::encoders::ArchitectureSpec) -> Result<usize> {
    match encoder_spec.tap_shape(Tap::Local)? {
        ActShape::Volume { channels, .. } => Ok(channels),
        ActShape::Flat(_) => bail!("local tap is not a feature map"),
    }
}

fn pretrain_as<T: Scalar>(cfg: &RunConfig) -> Result<Vec<PretrainSummary>> {
    let preset: Preset = cfg.parse_as("preset")?;
    if !preset.is_dim() {
        bail!("preset {preset} is not a DIM encoder");
    }
    let estimator: Estimator = cfg.parse_as("estimator")?;
    let setup = Setup::new(cfg, preset)?;
    let data = setup.dataset::<T>(Path::new(cfg.get("data")?))?;
    let ss = cfg.flag("ss")?.then(|| setup.manifest.num_classes());
    let embed: usize = cfg.parse_as("embed_dim")?;
    let mut out = Vec::new();
    for &k in &setup.folds {
        let (dir, mut sink) = setup.fold_output(k)?;
        let tc = train_config(cfg, setup.fold_seed(k))?;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut encoder = build_encoder::<T, _>(preset, setup.side, setup.manifest.num_classes(), &mut rng)?;
        let mut nets = StatisticsNetworks::new(
            local_channels(&encoder.spec)?,
            encoder.spec.output_dim(),
            embed,
            &mut rng,
        );
        let train = setup.plan.train_for(k);
        let outcome = pretrain_dim(&mut encoder, &mut nets, &data, &train, &tc, estimator, ss, &mut sink)?;
        let ckpt = dir.join(CKPT);
        save_checkpoint(&ckpt.join("encoder.final.ckpt"), &encoder.params)?;
        save_checkpoint(&ckpt.join("stats.final.ckpt"), &nets.params)?;
        if let Some((enc, stats)) = &outcome.best {
            save_checkpoint(&ckpt.join("encoder.best.ckpt"), enc)?;
            save_checkpoint(&ckpt.join("stats.best.ckpt"), stats)?;
        }
        if let Some((_, head)) = &outcome.z_head {
            save_checkpoint(&ckpt.join("zhead.ckpt"), head)?;
        }
        let mut report = String::from("fold,best_epoch,best_objective,final_objective\n");
        let best = outcome.best_epoch.map(|e| outcome.epoch_objectives[e - 1]);
        report.push_str(&format!(
            "{k},{},{},{}\n",
            outcome.best_epoch.map_or(String::new(), |e| e.to_string()),
            best.map_or(String::new(), |v| v.to_string()),
            outcome.epoch_objectives.last().map_or(String::new(), |v| v.to_string()),
        ));
        fs::write(dir.join(REPORT), report)?;
        out.push(PretrainSummary {
            fold: k,
            best_epoch: outcome.best_epoch,
            epoch_objectives: outcome.epoch_objectives,
            step_objectives: outcome.step_objectives,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------- probe

pub fn probe(cfg: &RunConfig) -> Result<Vec<FoldScore>> {
    let pretrained = PathBuf::from(cfg.get("pretrained")?);
    let snapshot = pretrained.join(SNAPSHOT);
    if !snapshot.is_file() {
        bail!("missing input: {} (run `pretrain` first)", snapshot.display());
    }
    let base = RunConfig::load(&snapshot, PRETRAIN_KEYS)?.resolve(PRETRAIN_KEYS)?;
    match dtype(&base)? {
        DType::F32 => probe_as::<f32>(cfg, &base),
        DType::F64 => probe_as::<f64>(cfg, &base),
    }
}

fn probe_as<T: Scalar>(cfg: &RunConfig, base: &RunConfig) -> Result<Vec<FoldScore>> {
    let pretrained = PathBuf::from(cfg.get("pretrained")?);
    let which = cfg.get("checkpoint")?;
    if which != "final" && which != "best" {
        bail!("config key `checkpoint` = `{which}`: expected final or best");
    }
    let tap: Tap = cfg.parse_as("tap")?;
    let preset: Preset = base.parse_as("preset")?;

    // inherit the data and split of the pretraining run
    let mut inherited = base.clone();
    inherited.set("out", vec![cfg.get("out")?.to_string()], PRETRAIN_KEYS)?;
    inherited.set("fold", vec![cfg.get("fold")?.to_string()], PRETRAIN_KEYS)?;
    inherited.set("canonical", vec![cfg.get("canonical")?.to_string()], PRETRAIN_KEYS)?;
    inherited.set("augment", vec!["false".into()], PRETRAIN_KEYS)?;
    let folds = parse_folds(cfg.get("fold")?, base.parse_as("folds")?)?;
    let wanted = |k: usize| fold_dir(&pretrained, k).join(CKPT).join(format!("encoder.{which}.ckpt"));
    let missing: Vec<String> = folds
        .iter()
        .map(|&k| wanted(k))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        bail!("missing input: {}", missing.join(", "));
    }
    let setup = Setup::new(&inherited, preset)?;
    fs::write(setup.out.join(SNAPSHOT), cfg.snapshot())?;
    let data = setup.dataset::<T>(Path::new(base.get("data")?))?;
    let holdout = setup.plan.holdout();
    let mut scores = Vec::new();
    for &k in &setup.folds {
        let (dir, mut sink) = setup.fold_output(k)?;
        let tc = train_config(cfg, setup.fold_seed(k))?;
        let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
        let mut encoder: Encoder<T> = build_encoder(preset, setup.side, setup.manifest.num_classes(), &mut rng)?;
        load_checkpoint(&wanted(k), &mut encoder.params)?;
        let (train, val) = (setup.plan.train_for(k), setup.plan.fold(k));
        let classes = setup.manifest.num_classes();
        let outcome = train_probe(&mut encoder, tap, classes, &data, &train, &val, &tc, &mut sink)?;
        let selected = &outcome.training.selected;
        save_checkpoint(&dir.join(CKPT).join("probe.ckpt"), selected)?;
        let score = FoldScore {
            fold: k,
            selected_epoch: outcome.training.selection.map(|s| s.checkpoint.epoch),
            cv: evaluate_probe(&mut encoder, tap, &outcome.head, selected, &data, &val)?.1,
            holdout: evaluate_probe(&mut encoder, tap, &outcome.head, selected, &data, &holdout)?.1,
        };
        write_fold_score(&dir, &score)?;
        scores.push(score);
    }
    Ok(scores)
}

// ---------------------------------------------------------------- eval / compare

/// Fold scores of `run` for folds `0..folds`, or the list of missing reports.
fn read_fold_scores(run: &Path, folds: usize) -> std::result::Result<Vec<FoldScore>, Vec<PathBuf>> {
    let mut scores = Vec::new();
    let mut missing = Vec::new();
    for k in 0..folds {
        let path = fold_dir(run, k).join(REPORT);
        match fs::read_to_string(&path).ok().and_then(|t| FoldScore::parse(&t).ok()) {
            Some(s) => scores.push(s),
            None => missing.push(path),
        }
    }
    if missing.is_empty() {
        Ok(scores)
    } else {
        Err(missing)
    }
}

fn missing_error(missing: &[PathBuf]) -> anyhow::Error {
    let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
    anyhow!("incomplete folds, missing: {}", list.join(", "))
}

fn record(name: &str, scores: &[FoldScore], kind: StdKind) -> Result<MetricsRecord> {
    let cv: Vec<f64> = scores.iter().map(|s| s.cv).collect();
    let ho: Vec<f64> = scores.iter().map(|s| s.holdout).collect();
    Ok(aggregate(name, &cv, &ho, kind)?)
}

pub fn eval(cfg: &RunConfig) -> Result<MetricsRecord> {
    let run = PathBuf::from(cfg.get("run")?);
    let scores = read_fold_scores(&run, cfg.parse_as("folds")?).map_err(|m| missing_error(&m))?;
    let name = match cfg.get("name")? {
        "" => run.file_name().map_or("model".into(), |n| n.to_string_lossy().into_owned()),
        n => n.to_string(),
    };
    let rec = record(&name, &scores, cfg.parse_as("std")?)?;
    let csv = format!(
        "model,cv_mean,cv_std,holdout_mean,holdout_std,gap\n{},{},{},{},{},{}\n",
        rec.model, rec.cv_mean, rec.cv_std, rec.holdout_mean, rec.holdout_std, rec.gap
    );
    fs::write(run.join(REPORT), csv)?;
    Ok(rec)
}

pub fn compare(cfg: &RunConfig) -> Result<Report> {
    let folds: usize = cfg.parse_as("folds")?;
    let kind: StdKind = cfg.parse_as("std")?;
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for spec in cfg.all("model") {
        let (name, dir) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("config key `model` = `{spec}`: expected NAME=RUN_DIR"))?;
        match read_fold_scores(Path::new(dir), folds) {
            Ok(scores) => records.push(record(name, &scores, kind)?),
            Err(m) => missing.extend(m),
        }
    }
    if !missing.is_empty() {
        return Err(missing_error(&missing));
    }
    let report = compare_models(records)?;
    match cfg.get("out")? {
        "" => {}
        out => {
            fs::create_dir_all(out)?;
            fs::write(Path::new(out).join(REPORT), report.to_csv())?;
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- gradcheck

pub fn gradcheck(cfg: &RunConfig) -> Result<Vec<OpReport>> {
    let ops: Vec<&str> = match cfg.get("ops")? {
        "all" => SUITE.to_vec(),
        list => list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
    };
    let fault = Some(cfg.get("inject_fault")?).filter(|f| !f.is_empty());
    let reports = run_suite(&ops, cfg.parse_as("seeds")?, fault)?;
    for r in &reports {
        println!(
            "{:<18} max rel error {:.3e} (tolerance {:.0e})  {}",
            r.name,
            r.max_rel_error,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(NumericalFailure(format!("gradient check failed for {}", failed.join(", "))).into());
    }
    Ok(reports)
}
