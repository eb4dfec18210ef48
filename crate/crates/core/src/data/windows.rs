use std::collections::BTreeMap;

use log::warn;
use rand::seq::SliceRandom;

use super::RecordingSet;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Fixed-length windows `[N x T x C]` with their labels and subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDataset {
    /// Row-major `N x T x C`.
    pub windows: Vec<f64>,
    pub steps: usize,
    pub channels: usize,
    pub labels: Vec<Option<usize>>,
    pub subject_ids: Vec<String>,
    pub window_seconds: f64,
    pub overlap_fraction: f64,
    pub sample_rate_hz: f64,
    pub num_classes: usize,
}

/// `floor((len - steps) / stride) + 1` windows, or none when `len < steps`.
pub fn window_count(len: usize, steps: usize, stride: usize) -> usize {
    if len < steps || steps == 0 {
        0
    } else {
        (len - steps) / stride + 1
    }
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window(&self, i: usize) -> &[f64] {
        let n = self.steps * self.channels;
        &self.windows[i * n..(i + 1) * n]
    }

    /// One window as a `[T x C]` matrix.
    pub fn window_matrix<S: Scalar>(&self, i: usize) -> Matrix<S> {
        Matrix::from_vec(self.steps, self.channels, self.window(i).iter().map(|&v| S::cast(v)).collect())
    }

    /// Time-major batch `[T*B x C]`: row `t*B + b` is timestep `t` of window `indices[b]`.
    pub fn batch<S: Scalar>(&self, indices: &[usize]) -> Matrix<S> {
        let b = indices.len();
        let mut m = Matrix::zeros(self.steps * b, self.channels);
        for (j, &i) in indices.iter().enumerate() {
            let w = self.window(i);
            for t in 0..self.steps {
                let src = &w[t * self.channels..(t + 1) * self.channels];
                for (d, &s) in m.row_mut(t * b + j).iter_mut().zip(src) {
                    *d = S::cast(s);
                }
            }
        }
        m
    }

    pub fn subset(&self, indices: &[usize]) -> WindowDataset {
        let mut windows = Vec::with_capacity(indices.len() * self.steps * self.channels);
        for &i in indices {
            windows.extend_from_slice(self.window(i));
        }
        WindowDataset {
            windows,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subject_ids: indices.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> WindowDataset {
        WindowDataset {
            windows: Vec::new(),
            steps: self.steps,
            channels: self.channels,
            labels: Vec::new(),
            subject_ids: Vec::new(),
            window_seconds: self.window_seconds,
            overlap_fraction: self.overlap_fraction,
            sample_rate_hz: self.sample_rate_hz,
            num_classes: self.num_classes,
        }
    }

    /// Only the labeled windows.
    pub fn labeled(&self) -> WindowDataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i].is_some()).collect();
        self.subset(&idx)
    }

    pub fn with_num_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    /// Window indices per class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(&c) = l.as_ref() {
                if c < out.len() {
                    out[c].push(i);
                }
            }
        }
        out
    }

    /// Labels of a fully labeled dataset.
    pub fn dense_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::Data(format!("window {i} has no label"))))
            .collect()
    }
}

/// Majority label over a window; ties go to the label seen latest in the window.
fn window_label(labels: &[Option<usize>]) -> Option<usize> {
    let mut counts: BTreeMap<Option<usize>, (usize, usize)> = BTreeMap::new();
    for (pos, l) in labels.iter().enumerate() {
        let e = counts.entry(*l).or_insert((0, 0));
        e.0 += 1;
        e.1 = pos;
    }
    counts.into_iter().max_by_key(|&(_, (count, last))| (count, last)).and_then(|(l, _)| l)
}

pub fn segment_windows(rs: &RecordingSet, window_seconds: f64, overlap_fraction: f64) -> Result<WindowDataset> {
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::InvalidArgument(format!("overlap fraction {overlap_fraction} outside [0, 1)")));
    }
    if !(window_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!("window length {window_seconds}s must be positive")));
    }
    let rate = match rs.sample_rate_hz() {
        Some(r) => r,
        None if rs.recordings.is_empty() => 1.0,
        None => return Err(Error::Data("recordings have different sample rates; resample first".into())),
    };
    let steps = (window_seconds * rate).round() as usize;
    if steps == 0 {
        return Err(Error::InvalidArgument("window shorter than one sample".into()));
    }
    let stride = steps - (steps as f64 * overlap_fraction).floor() as usize;
    let c = rs.num_channels();
    let mut ds = WindowDataset {
        windows: Vec::new(),
        steps,
        channels: c,
        labels: Vec::new(),
        subject_ids: Vec::new(),
        window_seconds,
        overlap_fraction,
        sample_rate_hz: rate,
        num_classes: rs.num_classes(),
    };
    for r in &rs.recordings {
        let count = window_count(r.len(), steps, stride);
        if count == 0 {
            warn!("subject {}: {} timesteps is shorter than a {steps}-step window", r.subject_id, r.len());
        }
        for w in 0..count {
            let start = w * stride;
            ds.windows.extend_from_slice(&r.samples.as_slice()[start * c..(start + steps) * c]);
            ds.labels.push(window_label(&r.labels[start..start + steps]));
            ds.subject_ids.push(r.subject_id.clone());
        }
    }
    Ok(ds)
}

/// Draws up to `per_class` windows of every class without replacement.
/// Output keeps the original window order.
pub fn sample_labeled_subset(ds: &WindowDataset, per_class: usize, seed: u64) -> Result<WindowDataset> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per-class budget must be positive".into()));
    }
    let mut rng = seeded_rng(seed, 0x1abe1);
    let mut chosen = Vec::new();
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.is_empty() {
            warn!("class {class} has no windows; excluded from the labeled subset");
            continue;
        }
        if idx.len() < per_class {
            warn!("class {class} has only {} windows (< {per_class}); taking all", idx.len());
        }
        idx.shuffle(&mut rng);
        chosen.extend(idx.into_iter().take(per_class));
    }
    chosen.sort_unstable();
    Ok(ds.subset(&chosen))
}
