//! Recording ingest and preparation: resampling, subject splits,
//! normalization, windowing and label-budget sampling.

mod csv_io;
mod normalize;
mod prepare;
mod resample;
mod split;
mod synthetic;
mod windows;

pub use csv_io::{load_recordings, write_recordings};
pub use normalize::{apply_normalization, fit_normalization, NormalizationStats, STD_EPSILON};
pub use prepare::{prepare, PipelineConfig, PreparedData};
pub use resample::resample;
pub use split::{split_by_subject, SplitAssignment, SplitPolicy};
pub use synthetic::{generate_synthetic, SyntheticConfig};
pub use windows::{sample_labeled_subset, segment_windows, window_count, WindowDataset};

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: String,
    pub sample_rate_hz: f64,
    /// `[num_timesteps x num_channels]`
    pub samples: Matrix<f64>,
    /// `None` marks an unlabeled timestep.
    pub labels: Vec<Option<usize>>,
}

impl Recording {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSet {
    pub channels: Vec<String>,
    pub recordings: Vec<Recording>,
}

impl RecordingSet {
    pub fn new(channels: Vec<String>, recordings: Vec<Recording>) -> Result<Self> {
        let set = Self { channels, recordings };
        set.check()?;
        Ok(set)
    }

    fn check(&self) -> Result<()> {
        for r in &self.recordings {
            if r.is_empty() {
                return Err(Error::Data(format!("recording for subject {} has no timesteps", r.subject_id)));
            }
            if r.samples.cols() != self.channels.len() {
                return Err(Error::Data(format!(
                    "subject {}: {} channels, expected {}",
                    r.subject_id,
                    r.samples.cols(),
                    self.channels.len()
                )));
            }
            if r.labels.len() != r.samples.rows() {
                return Err(Error::Data(format!("subject {}: label count differs from sample count", r.subject_id)));
            }
            if !(r.sample_rate_hz > 0.0 && r.sample_rate_hz.is_finite()) {
                return Err(Error::Data(format!("subject {}: invalid sample rate", r.subject_id)));
            }
        }
        Ok(())
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn subjects(&self) -> BTreeSet<String> {
        self.recordings.iter().map(|r| r.subject_id.clone()).collect()
    }

    /// One more than the largest label present (0 when unlabeled).
    pub fn num_classes(&self) -> usize {
        self.recordings
            .iter()
            .flat_map(|r| r.labels.iter().flatten())
            .max()
            .map_or(0, |&m| m + 1)
    }

    /// Recordings whose subject is in `subjects`, in original order.
    pub fn subset(&self, subjects: &BTreeSet<String>) -> RecordingSet {
        RecordingSet {
            channels: self.channels.clone(),
            recordings: self.recordings.iter().filter(|r| subjects.contains(&r.subject_id)).cloned().collect(),
        }
    }

    /// The common sample rate, if every recording agrees.
    pub fn sample_rate_hz(&self) -> Option<f64> {
        let first = self.recordings.first()?.sample_rate_hz;
        self.recordings.iter().all(|r| r.sample_rate_hz == first).then_some(first)
    }
}
