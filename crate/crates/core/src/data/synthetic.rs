use std::f64::consts::TAU;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Recording, RecordingSet};
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::tensor::Matrix;

/// Regime-switching multichannel oscillators standing in for body-worn
/// sensor recordings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_subjects: usize,
    pub num_classes: usize,
    pub num_channels: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Per-class base frequency; defaults to an even spread over 1..4 Hz.
    pub base_frequencies_hz: Option<Vec<f64>>,
    pub min_dwell_s: f64,
    pub max_dwell_s: f64,
    /// Phase random-walk step (radians per sample) per unit of `noise_std`.
    pub phase_diffusion: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_subjects: 10,
            num_classes: 6,
            num_channels: 6,
            duration_s: 60.0,
            rate_hz: 30.0,
            noise_std: 0.5,
            seed: 0,
            base_frequencies_hz: None,
            min_dwell_s: 2.0,
            max_dwell_s: 6.0,
            phase_diffusion: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.num_classes < 2 {
            v.push("synthetic data needs at least 2 classes".into());
        }
        if self.num_subjects == 0 || self.num_channels == 0 {
            v.push("synthetic data needs subjects and channels".into());
        }
        if !(self.rate_hz > 0.0) || !(self.duration_s > 0.0) {
            v.push("rate and duration must be positive".into());
        }
        if !(self.noise_std >= 0.0) || !(self.phase_diffusion >= 0.0) {
            v.push("noise levels must be non-negative".into());
        }
        if !(self.min_dwell_s >= 2.0) || self.max_dwell_s < self.min_dwell_s {
            v.push("dwell times must satisfy 2 <= min <= max".into());
        }
        if let Some(f) = &self.base_frequencies_hz {
            if f.len() != self.num_classes || f.iter().any(|&x| !(x > 0.0)) {
                v.push("one positive base frequency per class is required".into());
            }
        }
        v
    }

    pub fn frequencies(&self) -> Vec<f64> {
        match &self.base_frequencies_hz {
            Some(f) => f.clone(),
            None => (0..self.num_classes).map(|c| 1.0 + 3.0 * c as f64 / (self.num_classes - 1) as f64).collect(),
        }
    }
}

struct ClassProfile {
    freq: f64,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
    harmonic: Vec<f64>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<RecordingSet> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    let mut rng = seeded_rng(cfg.seed, 0x5_7e71c);
    let c = cfg.num_channels;
    let profiles: Vec<ClassProfile> = cfg
        .frequencies()
        .into_iter()
        .map(|freq| ClassProfile {
            freq,
            amplitude: (0..c).map(|_| rng.random_range(0.5..1.5)).collect(),
            phase: (0..c).map(|_| rng.random_range(0.0..TAU)).collect(),
            harmonic: (0..c).map(|_| rng.random_range(0.0..0.4)).collect(),
        })
        .collect();

    let standard = Normal::new(0.0, 1.0).expect("unit normal");
    let n = (cfg.duration_s * cfg.rate_hz).round() as usize;
    let min_dwell = (cfg.min_dwell_s * cfg.rate_hz).ceil() as usize;
    let max_dwell = ((cfg.max_dwell_s * cfg.rate_hz).floor() as usize).max(min_dwell);
    let phase_step_std = cfg.phase_diffusion * cfg.noise_std;

    let mut recordings = Vec::with_capacity(cfg.num_subjects);
    for s in 0..cfg.num_subjects {
        let phase_jitter: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let amp_jitter: Vec<f64> = (0..c).map(|_| rng.random_range(0.8..1.2)).collect();
        let mut samples = Matrix::zeros(n, c);
        let mut labels = Vec::with_capacity(n);
        let mut class = rng.random_range(0..cfg.num_classes);
        let mut remaining = rng.random_range(min_dwell..=max_dwell);
        let mut theta = rng.random_range(0.0..TAU);
        let mut step_in_regime = 0usize;
        let mut regime_start = theta;
        for t in 0..n {
            if remaining == 0 {
                let shift = rng.random_range(1..cfg.num_classes);
                class = (class + shift) % cfg.num_classes;
                remaining = rng.random_range(min_dwell..=max_dwell);
                regime_start = theta;
                step_in_regime = 0;
            }
            let p = &profiles[class];
            let delta = TAU * p.freq / cfg.rate_hz;
            theta = if phase_step_std > 0.0 {
                if step_in_regime == 0 { theta } else { theta + delta + phase_step_std * standard.sample(&mut rng) }
            } else {
                // noiseless phase is computed in closed form so each regime is exactly periodic
                regime_start + delta * step_in_regime as f64
            };
            let row = samples.row_mut(t);
            for ch in 0..c {
                let arg = theta + p.phase[ch] + phase_jitter[ch];
                let clean = amp_jitter[ch] * p.amplitude[ch] * (arg.sin() + p.harmonic[ch] * (2.0 * arg).sin());
                row[ch] = if cfg.noise_std > 0.0 { clean + cfg.noise_std * standard.sample(&mut rng) } else { clean };
            }
            labels.push(Some(class));
            remaining -= 1;
            step_in_regime += 1;
        }
        recordings.push(Recording {
            subject_id: format!("{}", s + 1),
            sample_rate_hz: cfg.rate_hz,
            samples,
            labels,
        });
    }
    let channels = (0..c).map(|i| format!("ch{i}")).collect();
    RecordingSet::new(channels, recordings)
}
