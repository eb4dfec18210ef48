use log::info;
use serde::{Deserialize, Serialize};

use super::{
    apply_normalization, fit_normalization, resample, segment_windows, split_by_subject, NormalizationStats, RecordingSet,
    SplitAssignment, SplitPolicy, WindowDataset,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// `None` keeps the source rate (all recordings must then share one).
    pub target_rate_hz: Option<f64>,
    pub window_seconds: f64,
    pub overlap_fraction: f64,
    pub split: SplitPolicy,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { target_rate_hz: Some(30.0), window_seconds: 1.0, overlap_fraction: 0.5, split: SplitPolicy::Fractional }
    }
}

impl PipelineConfig {
    /// Timesteps per window at `rate_hz`.
    pub fn window_steps(&self, rate_hz: f64) -> usize {
        (self.window_seconds * rate_hz).round() as usize
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(r) = self.target_rate_hz {
            if !(r > 0.0) {
                v.push(format!("target rate must be positive, got {r}"));
            }
        }
        if !(self.window_seconds > 0.0) {
            v.push("window length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            v.push(format!("overlap fraction {} outside [0, 1)", self.overlap_fraction));
        }
        v
    }
}

/// Windowed splits normalized with training-split statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub split: SplitAssignment,
    pub stats: NormalizationStats,
    pub train: WindowDataset,
    pub val: WindowDataset,
    pub test: WindowDataset,
}

impl PreparedData {
    pub fn num_classes(&self) -> usize {
        self.train.num_classes
    }

    pub fn channels(&self) -> usize {
        self.train.channels
    }

    pub fn steps(&self) -> usize {
        self.train.steps
    }
}

pub fn prepare(rs: &RecordingSet, cfg: &PipelineConfig, seed: u64) -> Result<PreparedData> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    let rs = match cfg.target_rate_hz {
        Some(hz) if rs.sample_rate_hz() != Some(hz) => resample(rs, hz)?,
        _ => rs.clone(),
    };
    if rs.sample_rate_hz().is_none() {
        return Err(Error::Data("recordings have differing sample rates; set a target rate".into()));
    }
    let num_classes = rs.num_classes();
    let split = split_by_subject(&rs, &cfg.split, seed)?;
    let train_rs = rs.subset(&split.train);
    let stats = fit_normalization(&train_rs)?;
    let window = |subjects| -> Result<WindowDataset> {
        let part = apply_normalization(&rs.subset(subjects), &stats)?;
        Ok(segment_windows(&part, cfg.window_seconds, cfg.overlap_fraction)?.with_num_classes(num_classes))
    };
    let (train, val, test) = (window(&split.train)?, window(&split.val)?, window(&split.test)?);
    if train.is_empty() {
        return Err(Error::Data("training split yields no windows".into()));
    }
    info!("prepared {} train / {} val / {} test windows of {} steps", train.len(), val.len(), test.len(), train.steps);
    Ok(PreparedData { split, stats, train, val, test })
}
