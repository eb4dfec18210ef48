#![allow(dead_code)]

pub mod gradcheck;

use cpc_core::cpc::CpcArchitecture;
use cpc_core::data::{apply_normalization, fit_normalization, generate_synthetic, segment_windows, SyntheticConfig, WindowDataset};
use cpc_core::encoders::EncoderSpec;

/// Normalized 1 s windows with half overlap from a small synthetic corpus.
pub fn synthetic_windows(subjects: usize, seconds: f64, seed: u64) -> WindowDataset {
    let cfg = SyntheticConfig { num_subjects: subjects, duration_s: seconds, seed, ..Default::default() };
    let rs = generate_synthetic(&cfg).unwrap();
    let stats = fit_normalization(&rs).unwrap();
    segment_windows(&apply_normalization(&rs, &stats).unwrap(), 1.0, 0.5).unwrap()
}

/// A few hundred parameters in the backbone; fast enough for unit-scale training.
pub fn small_arch(channels: usize, horizon: usize) -> CpcArchitecture {
    let mut enc = EncoderSpec::conv1d(3);
    enc.layer_widths = vec![4, 4, 6];
    CpcArchitecture { context_dim: 8, gar_layers: 2, gar_dropout: 0.2, ..CpcArchitecture::new(enc, channels, horizon) }
}
