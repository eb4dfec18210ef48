//! The `cpc` command line: `synth`, `pretrain`, `finetune`, `evaluate` and
//! `sweep`, each writing its artifacts and resolved configuration to an
//! output directory.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{validate_config, Command, DataConfig, Precision, RunConfig, SweepConfig, SweepKind};

use crate::classifier::FreezePolicy;
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cpc", version, about = "Contrastive predictive coding for sensor-based activity recognition")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Write a synthetic recording set as canonical CSV
    Synth(Flags),
    /// Self-supervised pre-training; writes checkpoint.bin and history.json
    Pretrain(Flags),
    /// Train a classifier on a pre-trained checkpoint; writes classifier.bin
    Finetune(Flags),
    /// Score a classifier checkpoint on the test split
    Evaluate(Flags),
    /// Label-budget sweep or one of the ablations
    Sweep(Flags),
}

#[derive(Debug, Args)]
struct Flags {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Serial execution for bit-identical reruns
    #[arg(long)]
    deterministic: bool,
    /// Allow writing into a non-empty output directory
    #[arg(long)]
    force: bool,
    /// Canonical recording CSV files
    #[arg(long, num_args = 1.., conflicts_with = "synthetic")]
    data: Vec<PathBuf>,
    /// Use the synthetic generator even if the config lists recordings
    #[arg(long)]
    synthetic: bool,
    /// Pre-trained (finetune, sweep) or classifier (evaluate) checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    policy: Option<FreezePolicy>,
    /// Epochs for the stage being run
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    label_budget: Option<usize>,
    #[arg(long)]
    sweep: Option<SweepKindArg>,
    /// Use 64-bit floats
    #[arg(long)]
    f64: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum SweepKindArg {
    SemiSupervised,
    Encoders,
    Horizon,
    Freeze,
}

impl clap::ValueEnum for FreezePolicy {
    fn value_variants<'a>() -> &'a [Self] {
        &FreezePolicy::ALL
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.label()))
    }
}

fn merge(mut cfg: RunConfig, command: Command, f: &Flags) -> RunConfig {
    cfg.command = Some(command);
    if let Some(out) = &f.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = f.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= f.deterministic;
    if !f.data.is_empty() {
        cfg.data.recordings = f.data.clone();
    }
    if f.synthetic {
        cfg.data.recordings.clear();
    }
    if let Some(c) = &f.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(p) = f.policy {
        cfg.policy = p;
    }
    if let Some(b) = f.label_budget {
        cfg.label_budget = Some(b);
    }
    if let Some(e) = f.epochs {
        match command {
            Command::Pretrain => cfg.pretrain.epochs = e,
            Command::Finetune => cfg.finetune.epochs = e,
            _ => {
                cfg.pretrain.epochs = e;
                cfg.finetune.epochs = e;
            }
        }
    }
    if let Some(k) = f.sweep {
        cfg.sweep.kind = match k {
            SweepKindArg::SemiSupervised => SweepKind::SemiSupervised,
            SweepKindArg::Encoders => SweepKind::Encoders,
            SweepKindArg::Horizon => SweepKind::Horizon,
            SweepKindArg::Freeze => SweepKind::Freeze,
        };
    }
    if f.f64 {
        cfg.precision = Precision::F64;
    }
    cfg.pretrain.seed = cfg.seed;
    cfg.finetune.seed = cfg.seed;
    cfg
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFiniteLoss { .. } => EXIT_NUMERIC,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn directory_is_empty(dir: &Path) -> bool {
    std::fs::read_dir(dir).map(|mut it| it.next().is_none()).unwrap_or(true)
}

/// Parses `args` (program name first), runs the stage and returns the
/// process exit code: 0 success, 1 usage or configuration error, 2 data
/// error, 3 non-finite loss.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (command, flags) = match &cli.command {
        Sub::Synth(f) => (Command::Synth, f),
        Sub::Pretrain(f) => (Command::Pretrain, f),
        Sub::Finetune(f) => (Command::Finetune, f),
        Sub::Evaluate(f) => (Command::Evaluate, f),
        Sub::Sweep(f) => (Command::Sweep, f),
    };
    let base = match &flags.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match serde_json::from_str::<RunConfig>(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return EXIT_USAGE;
                }
            },
            Err(e) => {
                eprintln!("error: cannot read config {}: {e}", path.display());
                return EXIT_USAGE;
            }
        },
        None => RunConfig::default(),
    };
    let cfg = merge(base, command, flags);
    let problems = validate_config(&cfg);
    if !problems.is_empty() {
        for p in &problems {
            eprintln!("error: {p}");
        }
        return EXIT_USAGE;
    }
    let Some(out) = cfg.out.clone() else {
        eprintln!("error: no output directory; pass --out or set \"out\" in the config");
        return EXIT_USAGE;
    };
    if !flags.force && !directory_is_empty(&out) {
        eprintln!("error: {} is not empty; pass --force to write into it", out.display());
        return EXIT_USAGE;
    }
    match commands::execute(&cfg, &out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
