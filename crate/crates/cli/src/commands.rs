//! The five subcommands. Each writes its outputs under `out_dir` together
//! with a manifest of the resolved configuration and input digests.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use setransformer_core::data::{
    assemble, class_counts, encode_labels, make_windows, parse_raw, retain_activities, synthesize_dataset, Dataset,
    SplitConfig, SynthSpec,
};
use setransformer_core::metrics::ConfusionMatrix;
use setransformer_core::model::{self, checkpoint, ModelParams, ParamVars, SeTransformer};
use setransformer_core::tensor::{grad_check, Coordinates, GradCheckOptions, Scalar, Tensor};
use setransformer_core::training::{self, Precision};
use setransformer_core::Error;

use crate::config::{EvalSplit, RunConfig};

/// Failure of a command, carrying the process exit status.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Dimension(_) | Error::Contract(_) => CliError::Usage(msg),
            Error::Data(_) | Error::Format(_) | Error::Io(_) => CliError::Data(msg),
            Error::NonFinite(_) | Error::UnreliableCheck(_) => CliError::Numeric(msg),
        }
    }
}

type CmdResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn sha256_file(path: &Path) -> CmdResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

struct Run<'a> {
    command: &'static str,
    cfg: &'a RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, cfg: &'a RunConfig) -> CmdResult<Self> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| io_err(&cfg.out_dir, e))?;
        Ok(Self {
            command,
            cfg,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    /// Writes `manifest_<command>.json`: resolved config plus digests.
    fn finish(self) -> CmdResult {
        let digest = |paths: &[PathBuf]| -> CmdResult<Vec<serde_json::Value>> {
            paths
                .iter()
                .map(|p| Ok(json!({ "path": p.display().to_string(), "sha256": sha256_file(p)? })))
                .collect()
        };
        let manifest = json!({
            "tool": "setr",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config": self.cfg.resolved(),
            "inputs": digest(&self.inputs)?,
            "outputs": digest(&self.outputs)?,
        });
        write_json(&self.out(&format!("manifest_{}.json", self.command)), &manifest)
    }
}

fn dataset_path(cfg: &RunConfig) -> PathBuf {
    cfg.dataset.clone().unwrap_or_else(|| cfg.out_dir.join("dataset.bin"))
}

fn split_config(cfg: &RunConfig) -> SplitConfig {
    SplitConfig {
        train_fraction: cfg.train_fraction,
        mode: cfg.split_mode,
        seed: cfg.split_seed,
    }
}

fn save_dataset(run: &mut Run, ds: &Dataset) -> CmdResult<PathBuf> {
    let path = dataset_path(run.cfg);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    write_file(&path, &ds.encode())?;
    run.outputs.push(path.clone());
    Ok(path)
}

fn per_class(ds: &Dataset) -> serde_json::Map<String, serde_json::Value> {
    ds.labels
        .names()
        .iter()
        .zip(class_counts(&ds.samples, ds.num_classes()))
        .map(|(l, n)| (l.clone(), json!(n)))
        .collect()
}

pub fn preprocess(cfg: &RunConfig) -> CmdResult {
    let input = cfg
        .input
        .clone()
        .ok_or_else(|| CliError::Usage("preprocess needs `input=<raw text file>`".into()))?;
    let mut run = Run::start("preprocess", cfg)?;
    let file = File::open(&input).map_err(|e| io_err(&input, e))?;
    let mut report = parse_raw(BufReader::new(file), &cfg.schema)?;
    let filtered = retain_activities(&mut report.records, &cfg.activities);
    if report.records.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no records left after keeping activities [{}]",
            input.display(),
            cfg.activities.join(", ")
        )));
    }
    let labels = encode_labels(&report.records);
    let users = setransformer_core::data::group_by_user(&report.records).len();
    let windows = make_windows(&report.records, &labels, &cfg.window, cfg.train.workers)?;
    let ds = assemble(
        windows,
        labels,
        cfg.window.len,
        cfg.schema.to_string(),
        split_config(cfg),
    )?;
    run.inputs.push(input);
    let path = save_dataset(&mut run, &ds)?;
    let split = ds.split_indices()?;
    let ingest = json!({
        "lines_kept": report.records.len(),
        "lines_rejected": report.rejected,
        "records_outside_activities": filtered,
        "users": users,
        "windows": ds.samples.len(),
        "windows_per_class": per_class(&ds),
        "train_windows": split.train.len(),
        "val_windows": split.val.len(),
        "norm_mean": ds.stats.mean,
        "norm_std": ds.stats.std,
    });
    let report_path = run.out("ingest_report.json");
    write_json(&report_path, &ingest)?;
    run.outputs.push(report_path);
    println!(
        "kept {} lines, rejected {}, dropped {} outside the activity list; {} windows -> {}",
        report.records.len(),
        report.rejected,
        filtered,
        ds.samples.len(),
        path.display()
    );
    run.finish()
}

pub fn synth(cfg: &RunConfig) -> CmdResult {
    let mut run = Run::start("synth", cfg)?;
    let spec = SynthSpec {
        num_classes: cfg.model.num_classes,
        per_class: cfg.synth_per_class,
        window_len: cfg.model.window_len,
        seed: cfg.synth_seed,
    };
    let (samples, labels) = synthesize_dataset(&spec)?;
    let ds = assemble(samples, labels, spec.window_len, "synthetic".into(), split_config(cfg))?;
    let path = save_dataset(&mut run, &ds)?;
    println!(
        "{} synthetic windows ({} classes) -> {}",
        ds.samples.len(),
        ds.num_classes(),
        path.display()
    );
    run.finish()
}

fn load_dataset(run: &mut Run) -> CmdResult<Dataset> {
    let path = dataset_path(run.cfg);
    let ds = Dataset::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let m = &run.cfg.model;
    if ds.window_len != m.window_len {
        return Err(CliError::Usage(format!(
            "key `window_len`: dataset {} has windows of {} steps, config says {}",
            path.display(),
            ds.window_len,
            m.window_len
        )));
    }
    if ds.num_classes() != m.num_classes {
        return Err(CliError::Usage(format!(
            "key `num_classes`: dataset {} has {} classes, config says {}",
            path.display(),
            ds.num_classes(),
            m.num_classes
        )));
    }
    run.inputs.push(path);
    Ok(ds)
}

fn write_confusion(run: &mut Run, name: &str, cm: &ConfusionMatrix, ds: &Dataset) -> CmdResult {
    let path = run.out(name);
    write_file(&path, cm.to_csv(ds.labels.names())?.as_bytes())?;
    run.outputs.push(path);
    Ok(())
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

fn train_as<F: Scalar>(cfg: &RunConfig) -> CmdResult {
    let mut run = Run::start("train", cfg)?;
    let ds = load_dataset(&mut run)?;
    let split = ds.split_indices()?;
    let mut model = SeTransformer::<F>::new(cfg.model.clone(), cfg.train.seed)?;

    let trace_path = run.out("trace.jsonl");
    let mut trace = BufWriter::new(File::create(&trace_path).map_err(|e| io_err(&trace_path, e))?);
    let outcome = training::fit(&mut model, &ds.samples, &split.train, &split.val, &cfg.train, |r, _| {
        let line = serde_json::to_string(r).expect("serializable");
        writeln!(trace, "{line}").and_then(|_| trace.flush())?;
        println!(
            "epoch {:>3}  train loss {:.4}  val loss {:.4}  val acc {:.4}  val macro F1 {:.4}",
            r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.val_macro_f1
        );
        Ok(())
    })?;
    drop(trace);
    run.outputs.push(trace_path);

    for (name, params) in [
        ("checkpoint_final.bin", &model.params),
        ("checkpoint_best.bin", &outcome.best),
    ] {
        let path = run.out(name);
        write_file(&path, &checkpoint::encode(&model.config, params))?;
        run.outputs.push(path);
    }
    let ev = training::evaluate(&model, &ds.samples, &split.val, cfg.train.batch_size, cfg.train.workers)?;
    write_confusion(&mut run, "final_confusion.csv", &ev.confusion, &ds)?;
    println!(
        "best validation epoch {} ; final validation accuracy {:.4}",
        outcome.best_epoch,
        ev.confusion.summarize().accuracy
    );
    run.finish()
}

pub fn evaluate(cfg: &RunConfig) -> CmdResult {
    match cfg.train.precision {
        Precision::F32 => evaluate_as::<f32>(cfg),
        Precision::F64 => evaluate_as::<f64>(cfg),
    }
}

fn evaluate_as<F: Scalar>(cfg: &RunConfig) -> CmdResult {
    let mut run = Run::start("evaluate", cfg)?;
    let ckpt = cfg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("checkpoint_best.bin"));
    let bytes =
        fs::read(&ckpt).map_err(|e| CliError::Data(format!("cannot read checkpoint {}: {e}", ckpt.display())))?;
    let (model_cfg, params) =
        checkpoint::decode::<F>(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", ckpt.display())))?;
    if model_cfg != cfg.model {
        return Err(CliError::Usage(format!(
            "checkpoint {} was trained with a different model configuration ({model_cfg:?})",
            ckpt.display()
        )));
    }
    run.inputs.push(ckpt);
    let ds = load_dataset(&mut run)?;
    let split = ds.split_indices()?;
    let idx: Vec<usize> = match cfg.eval_split {
        EvalSplit::Train => split.train,
        EvalSplit::Val => split.val,
        EvalSplit::All => (0..ds.samples.len()).collect(),
    };
    let model = SeTransformer::from_parts(model_cfg, params)?;
    let ev = training::evaluate(&model, &ds.samples, &idx, cfg.train.batch_size, cfg.train.workers)?;
    let s = ev.confusion.summarize();
    let per_class: Vec<serde_json::Value> = ds
        .labels
        .names()
        .iter()
        .enumerate()
        .map(|(c, l)| {
            json!({
                "label": l,
                "support": ev.confusion.row_sum(c),
                "precision": s.precision[c],
                "recall": s.recall[c],
                "f1": s.f1[c],
            })
        })
        .collect();
    let metrics = json!({
        "split": cfg.eval_split.to_string(),
        "samples": idx.len(),
        "loss": ev.loss,
        "accuracy": s.accuracy,
        "macro_precision": s.macro_precision,
        "macro_recall": s.macro_recall,
        "macro_f1": s.macro_f1,
        "per_class": per_class,
    });
    let metrics_path = run.out("metrics.json");
    write_json(&metrics_path, &metrics)?;
    run.outputs.push(metrics_path);
    write_confusion(&mut run, "confusion.csv", &ev.confusion, &ds)?;
    println!(
        "{} split: {} windows, loss {:.4}, accuracy {:.4}, macro F1 {:.4}",
        cfg.eval_split,
        idx.len(),
        ev.loss,
        s.accuracy,
        s.macro_f1
    );
    run.finish()
}

/// Always 64-bit. Parameters are the seeded initialization nudged by
/// uniform noise in ±0.1 so no value sits exactly at its init.
pub fn gradcheck(cfg: &RunConfig) -> CmdResult {
    let mut run = Run::start("gradcheck", cfg)?;
    let c = &cfg.model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut params = ModelParams::<f64>::init(c, cfg.train.seed)?;
    for (_, t) in params.entries_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = 2;
    let xs: Vec<f64> = (0..batch * c.window_len * c.input_channels)
        .map(|_| rng.random_range(-1.5..1.5))
        .collect();
    let x = Tensor::<f64>::new(&[batch, c.window_len, c.input_channels], xs)?;
    let labels: Vec<usize> = (0..batch).map(|b| b % c.num_classes).collect();
    let named: Vec<(String, Tensor<f64>)> = params.entries().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let inputs: Vec<Tensor<f64>> = named.iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check(
        &inputs,
        |tape, vars| {
            let mut it = vars.iter().copied();
            let pv = ParamVars::try_from_fn(c.num_layers, |_| Ok(it.next().expect("one var per parameter")))?;
            let xv = tape.constant(&x);
            Ok(model::loss_on_tape(tape, &pv, c, xv, &labels)?.0)
        },
        &GradCheckOptions {
            eps: cfg.gradcheck_eps,
            coordinates: Coordinates::Sample {
                count: cfg.gradcheck_samples,
                seed: cfg.train.seed,
            },
        },
    )?;

    let mut csv = String::from("parameter,checked,kinks_excluded,max_rel_error,status\n");
    println!(
        "{:<24} {:>8} {:>6} {:>14}  status",
        "parameter", "checked", "kinks", "max rel error"
    );
    let mut failures = Vec::new();
    for ((name, _), r) in named.iter().zip(&report.per_input) {
        let ok = r.max_rel_error <= cfg.gradcheck_threshold;
        if !ok {
            failures.push(name.clone());
        }
        let status = if ok { "ok" } else { "FAIL" };
        println!(
            "{name:<24} {:>8} {:>6} {:>14.3e}  {status}",
            r.checked,
            r.kinks.len(),
            r.max_rel_error
        );
        csv.push_str(&format!(
            "{name},{},{},{:e},{status}\n",
            r.checked,
            r.kinks.len(),
            r.max_rel_error
        ));
    }
    println!(
        "overall: {} coordinates, max rel error {:.3e}, threshold {:e}",
        report.checked, report.max_rel_error, cfg.gradcheck_threshold
    );
    let path = run.out("gradcheck.csv");
    write_file(&path, csv.as_bytes())?;
    run.outputs.push(path);
    run.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check above threshold {:e} for: {}",
            cfg.gradcheck_threshold,
            failures.join(", ")
        )))
    }
}
