//! Command-line front end: dataset generation, embedding export, training,
//! evaluation, and score-file metrics.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
//! abort. Diagnostics go to standard error; results and the resolved
//! configuration echo go to standard output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use spfas_core::config::PipelineConfig;
use spfas_core::dataio::{generate_synthetic, load_sample, read_manifest, Label, Split};
use spfas_core::error::{Error, TrainError};
use spfas_core::metrics::{
    acer_report, confusion, format_table, read_scores, threshold_sweep, to_csv, write_scores,
    MetricsReport,
};
use spfas_core::model::{load_checkpoint, save_checkpoint};
use spfas_core::strategies::{
    write_embeddings, EmbeddingProvider, FileEmbeddingProvider, RandomProjectionEmbedder,
};
use spfas_core::trainer::{evaluate, score_manifest, train, write_train_log};

const USAGE: &str = "\
usage: spfas <command> [flags]

commands:
  gen-data  --out DIR [--seed N] [--scale F] [--height N] [--width N]
            generate the synthetic dataset (containers + train/val manifests)
  embed     --manifest FILE --out FILE [--provider random-projection|file:PATH]
            [--dim N] [--seed N]
            write face embeddings for reweighting, one manifest row per line
  train     --data DIR --out DIR [--config FILE] [--seed N] [--epochs N]
            [--batch-size N] [--workers N]
            train on DIR/train.tsv; writes checkpoint.spfc, train_log.txt and
            the resolved config; evaluates DIR/val.tsv when present
  eval      --checkpoint FILE --manifest FILE [--threshold F] [--csv FILE]
            [--scores-out FILE]
            score a labeled manifest and print the error-rate report
  score     --scores FILE --labels FILE (--threshold F | --sweep A,B,..)
            [--csv FILE]
            compute metrics from a score CSV and a manifest, no model needed

common flags:
  --workdir DIR   resolve all paths relative to DIR

precedence for train settings: defaults, then --config file, then flags.";

enum CliError {
    Usage(String),
    Pipeline(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Pipeline(e)
    }
}

macro_rules! from_core_error {
    ($ty:ty) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::Pipeline(e.into())
            }
        }
    };
}

from_core_error!(spfas_core::error::DataError);
from_core_error!(spfas_core::error::MetricsError);
from_core_error!(spfas_core::error::StrategyError);
from_core_error!(spfas_core::error::TrainError);
from_core_error!(spfas_core::error::ConfigError);

pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{USAGE}");
            1
        }
        Err(CliError::Pipeline(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Train(TrainError::NumericalAbort { .. }) => 3,
                _ => 2,
            }
        }
    }
}

// ── flag parsing ──────────────────────────────────────────────────────────

struct Flags {
    values: BTreeMap<String, String>,
    workdir: Option<PathBuf>,
}

impl Flags {
    fn parse(args: &[String], allowed: &[&str]) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let name = arg
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument {arg:?}")))?;
            if name != "workdir" && !allowed.contains(&name) {
                return Err(CliError::Usage(format!("unknown flag --{name}")));
            }
            let value = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?;
            if values.insert(name.to_string(), value.clone()).is_some() {
                return Err(CliError::Usage(format!("--{name} given twice")));
            }
            i += 2;
        }
        let workdir = values.remove("workdir").map(PathBuf::from);
        Ok(Flags { values, workdir })
    }

    fn resolve(&self, value: &str) -> PathBuf {
        match &self.workdir {
            Some(w) => w.join(value),
            None => PathBuf::from(value),
        }
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.values.get(name).map(|v| self.resolve(v))
    }

    fn required_path(&self, name: &str) -> Result<PathBuf, CliError> {
        self.path(name)
            .ok_or_else(|| CliError::Usage(format!("--{name} is required")))
    }

    fn get<T: std::str::FromStr>(&self, name: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(name) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| CliError::Usage(format!("--{name} {v:?}: {e}"))),
        }
    }

    fn raw(&self, name: &str) -> Option<&str> {
        self.values.get(name).map(|s| s.as_str())
    }

    fn echo(&self, command: &str) {
        print!("resolved: command={command}");
        if let Some(w) = &self.workdir {
            print!(" workdir={}", w.display());
        }
        for (k, v) in &self.values {
            print!(" {k}={v}");
        }
        println!();
    }
}

fn dispatch(args: &[String]) -> Result<(), CliError> {
    let command = args
        .first()
        .ok_or_else(|| CliError::Usage("missing command".into()))?;
    let rest = &args[1..];
    match command.as_str() {
        "gen-data" => cmd_gen_data(rest),
        "embed" => cmd_embed(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "score" => cmd_score(rest),
        "help" | "--help" | "-h" => {
            println!("{USAGE}");
            Ok(())
        }
        other => Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
}

// ── commands ──────────────────────────────────────────────────────────────

fn cmd_gen_data(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["seed", "scale", "out", "height", "width"])?;
    let out = flags.required_path("out")?;
    let seed: u64 = flags.get("seed", 0)?;
    let scale: f64 = flags.get("scale", 1.0)?;
    let height: usize = flags.get("height", 64)?;
    let width: usize = flags.get("width", 64)?;
    flags.echo("gen-data");
    let ds = generate_synthetic(&out, seed, scale, height, width)?;
    println!(
        "wrote {} train and {} val samples under {}",
        ds.train.entries.len(),
        ds.val.entries.len(),
        out.display()
    );
    Ok(())
}

fn cmd_embed(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["manifest", "provider", "out", "dim", "seed"])?;
    let manifest_path = flags.required_path("manifest")?;
    let out = flags.required_path("out")?;
    let dim: usize = flags.get("dim", 64)?;
    let seed: u64 = flags.get("seed", 0)?;
    let provider_spec = flags.raw("provider").unwrap_or("random-projection");
    flags.echo("embed");

    let manifest = read_manifest(&manifest_path, Split::Train)?;
    let root = manifest_dir(&manifest_path);
    let provider: Box<dyn EmbeddingProvider> = match provider_spec {
        "random-projection" => Box::new(RandomProjectionEmbedder::new(seed, dim)),
        spec => match spec.strip_prefix("file:") {
            Some(path) => Box::new(FileEmbeddingProvider::load(&flags.resolve(path))?),
            None => {
                return Err(CliError::Usage(format!(
                    "--provider must be random-projection or file:PATH, got {spec:?}"
                )))
            }
        },
    };
    let mut rows = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let sample = load_sample(&root, entry)?;
        rows.push((entry.id.clone(), provider.embed(&sample)?));
    }
    write_embeddings(&out, &rows)?;
    println!("wrote {} embeddings to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_train(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &[
            "config",
            "data",
            "out",
            "seed",
            "epochs",
            "batch-size",
            "workers",
        ],
    )?;
    let data = flags.required_path("data")?;
    let out = flags.required_path("out")?;
    let workers: usize = flags.get("workers", 1)?;

    let mut cfg = match flags.path("config") {
        Some(path) => PipelineConfig::load(&path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = flags.raw("seed") {
        cfg.train.seed = seed
            .parse()
            .map_err(|e| CliError::Usage(format!("--seed: {e}")))?;
    }
    if let Some(epochs) = flags.raw("epochs") {
        cfg.train.epochs = epochs
            .parse()
            .map_err(|e| CliError::Usage(format!("--epochs: {e}")))?;
    }
    if let Some(bs) = flags.raw("batch-size") {
        cfg.train.batch_size = bs
            .parse()
            .map_err(|e| CliError::Usage(format!("--batch-size: {e}")))?;
    }
    cfg.validate()?;
    flags.echo("train");
    print!("{}", cfg.to_text());

    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Pipeline(TrainError::Io(out.clone(), e).into()))?;
    let train_manifest = read_manifest(&data.join("train.tsv"), Split::Train)?;
    let outcome = train(&data, &train_manifest, &cfg, workers.max(1))?;

    let ckpt = out.join("checkpoint.spfc");
    save_checkpoint(&ckpt, &cfg.model, &outcome.params)?;
    write_train_log(&out.join("train_log.txt"), &outcome.reports)?;
    cfg.save(&out.join("config.txt"))?;
    for report in &outcome.reports {
        println!("{}", report.log_line());
    }
    println!("checkpoint: {}", ckpt.display());

    let val_path = data.join("val.tsv");
    if val_path.exists() {
        let val = read_manifest(&val_path, Split::Val)?;
        let report = evaluate(&outcome.params, &cfg.model, &data, &val, 0.5)?;
        print!("{}", format_table(&[report]));
    }
    Ok(())
}

fn cmd_eval(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(
        args,
        &["checkpoint", "manifest", "threshold", "csv", "scores-out"],
    )?;
    let ckpt = flags.required_path("checkpoint")?;
    let manifest_path = flags.required_path("manifest")?;
    let threshold: f64 = flags.get("threshold", 0.5)?;
    flags.echo("eval");

    let (mcfg, params) = load_checkpoint(&ckpt)?;
    let manifest = read_manifest(&manifest_path, Split::Val)?;
    let root = manifest_dir(&manifest_path);
    let scores = score_manifest(&params, &mcfg, &root, &manifest)?;
    if let Some(path) = flags.path("scores-out") {
        write_scores(&path, &scores)?;
    }
    let labels: BTreeMap<String, Label> = manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), e.label))
        .collect();
    let counts = confusion(&scores, &labels, threshold)?;
    let report = acer_report(counts, threshold)?;
    finish_reports(&flags, &[report])
}

fn cmd_score(args: &[String]) -> Result<(), CliError> {
    let flags = Flags::parse(args, &["scores", "labels", "threshold", "sweep", "csv"])?;
    let scores_path = flags.required_path("scores")?;
    let labels_path = flags.required_path("labels")?;
    flags.echo("score");

    let scores = read_scores(&scores_path)?;
    let manifest = read_manifest(&labels_path, Split::Test)?;
    let labels: BTreeMap<String, Label> = manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), e.label))
        .collect();

    let reports = match (flags.raw("threshold"), flags.raw("sweep")) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage(
                "--threshold and --sweep are mutually exclusive".into(),
            ))
        }
        (_, Some(sweep)) => {
            let grid: Vec<f64> = sweep
                .split(',')
                .map(|v| v.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Usage(format!("--sweep: {e}")))?;
            threshold_sweep(&scores, &labels, &grid)?
        }
        (maybe_thr, None) => {
            let threshold: f64 = match maybe_thr {
                Some(v) => v
                    .parse()
                    .map_err(|e| CliError::Usage(format!("--threshold: {e}")))?,
                None => 0.5,
            };
            let counts = confusion(&scores, &labels, threshold)?;
            vec![acer_report(counts, threshold)?]
        }
    };
    finish_reports(&flags, &reports)
}

fn finish_reports(flags: &Flags, reports: &[MetricsReport]) -> Result<(), CliError> {
    print!("{}", format_table(reports));
    if let Some(path) = flags.path("csv") {
        std::fs::write(&path, to_csv(reports))
            .map_err(|e| CliError::Pipeline(spfas_core::error::MetricsError::Io(path, e).into()))?;
    }
    Ok(())
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}
