use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::classifier::{FinetuneConfig, FreezePolicy};
use crate::cpc::PretrainConfig;
use crate::data::{PipelineConfig, SyntheticConfig};
use crate::encoders::EncoderSpec;
use crate::eval::{default_encoder_specs, DEFAULT_BUDGETS, DEFAULT_HORIZONS, DEFAULT_SEEDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Synth,
    Pretrain,
    Finetune,
    Evaluate,
    Sweep,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Where recordings come from: canonical CSV files, or the synthetic
/// generator when no files are listed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub recordings: Vec<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    #[default]
    SemiSupervised,
    Encoders,
    Horizon,
    Freeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub seeds: Vec<u64>,
    pub budgets: Vec<usize>,
    pub horizons: Vec<usize>,
    pub encoders: Vec<EncoderSpec>,
    pub policies: Vec<FreezePolicy>,
    pub random_control: bool,
    pub end_to_end: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            kind: SweepKind::SemiSupervised,
            seeds: DEFAULT_SEEDS.to_vec(),
            budgets: DEFAULT_BUDGETS.to_vec(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            encoders: default_encoder_specs(),
            policies: FreezePolicy::ALL.to_vec(),
            random_control: true,
            end_to_end: false,
        }
    }
}

/// Everything a run needs. Command-line flags are merged into this document
/// and the merged result is stored with the run's outputs. The top-level
/// `seed` is copied into the pre-training and fine-tuning sections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub data: DataConfig,
    pub pipeline: PipelineConfig,
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
    pub policy: FreezePolicy,
    /// Labels per class for fine-tuning; `None` uses every training label.
    pub label_budget: Option<usize>,
    /// Pre-trained checkpoint for `finetune`/`sweep`, classifier for `evaluate`.
    pub checkpoint: Option<PathBuf>,
    pub sweep: SweepConfig,
    pub precision: Precision,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Seed for the subject split; defaults to `seed`.
    pub split_seed: Option<u64>,
    pub deterministic: bool,
}

impl RunConfig {
    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }

    /// Window length implied by the pipeline, when it can be known before
    /// loading any data.
    pub fn window_steps(&self) -> Option<usize> {
        let rate = self.pipeline.target_rate_hz.or_else(|| self.data.recordings.is_empty().then_some(self.data.synthetic.rate_hz))?;
        Some(self.pipeline.window_steps(rate))
    }
}

/// Every problem that would stop `config` from running; empty when runnable.
pub fn validate_config(config: &RunConfig) -> Vec<String> {
    let mut v = config.pipeline.validate();
    if config.data.recordings.is_empty() {
        v.extend(config.data.synthetic.validate());
    }
    match config.window_steps() {
        Some(steps) => v.extend(config.pretrain.validate(steps)),
        None => v.extend(config.pretrain.validate(usize::MAX)),
    }
    v.extend(config.finetune.validate());
    if config.label_budget == Some(0) {
        v.push("label budget must be at least one window per class".into());
    }
    let command = config.command;
    if matches!(command, Some(Command::Finetune | Command::Evaluate)) && config.checkpoint.is_none() {
        v.push("a checkpoint path is required for this command".into());
    }
    if command == Some(Command::Sweep) {
        let s = &config.sweep;
        if s.seeds.is_empty() {
            v.push("sweep needs at least one seed".into());
        }
        match s.kind {
            SweepKind::SemiSupervised if s.budgets.is_empty() || s.budgets.contains(&0) => {
                v.push("label budgets must be a non-empty list of positive counts".into())
            }
            SweepKind::Encoders if s.encoders.is_empty() => v.push("no encoder specs to compare".into()),
            SweepKind::Encoders => {
                for e in &s.encoders {
                    v.extend(e.validate().into_iter().map(|m| format!("{}: {m}", e.label())));
                }
            }
            SweepKind::Horizon if s.horizons.is_empty() => v.push("no horizons to compare".into()),
            SweepKind::Horizon => {
                if let Some(t) = config.window_steps() {
                    for &k in &s.horizons {
                        if k == 0 || k >= t {
                            v.push(format!("horizon leaves no context: K = {k} with T = {t}"));
                        }
                    }
                }
            }
            SweepKind::Freeze if s.policies.is_empty() => v.push("no freeze policies to compare".into()),
            _ => {}
        }
    }
    v
}
