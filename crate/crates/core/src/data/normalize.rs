use serde::{Deserialize, Serialize};

use super::RecordingSet;
use crate::error::{Error, Result};

/// Floor applied to the standard deviation when normalizing.
pub const STD_EPSILON: f64 = 1e-8;

/// Per-channel moments of the training split (population convention).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean and population standard deviation over every timestep of `train`.
pub fn fit_normalization(train: &RecordingSet) -> Result<NormalizationStats> {
    let c = train.num_channels();
    let total: usize = train.recordings.iter().map(|r| r.len()).sum();
    if total == 0 {
        return Err(Error::Data("cannot fit normalization on an empty split".into()));
    }
    let n = total as f64;
    let mut mean = vec![0.0; c];
    for r in &train.recordings {
        for i in 0..r.len() {
            for (m, &v) in mean.iter_mut().zip(r.samples.row(i)) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; c];
    for r in &train.recordings {
        for i in 0..r.len() {
            for ((s, &v), &m) in var.iter_mut().zip(r.samples.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let std = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(NormalizationStats { channels: train.channels.clone(), mean, std })
}

/// `x' = (x - mean) / max(std, 1e-8)` channel-wise.
pub fn apply_normalization(rs: &RecordingSet, stats: &NormalizationStats) -> Result<RecordingSet> {
    if rs.channels != stats.channels {
        return Err(Error::Data(format!(
            "channel mismatch: data has {:?}, statistics were fitted on {:?}",
            rs.channels, stats.channels
        )));
    }
    let scale: Vec<f64> = stats.std.iter().map(|&s| s.max(STD_EPSILON)).collect();
    let mut out = rs.clone();
    for r in &mut out.recordings {
        for i in 0..r.len() {
            for ((v, &m), &s) in r.samples.row_mut(i).iter_mut().zip(&stats.mean).zip(&scale) {
                *v = (*v - m) / s;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Recording;
    use crate::tensor::Matrix;

    fn set(cols: Vec<Vec<f64>>) -> RecordingSet {
        let recs = cols
            .into_iter()
            .enumerate()
            .map(|(i, v)| Recording {
                subject_id: format!("s{i}"),
                sample_rate_hz: 30.0,
                labels: vec![None; v.len()],
                samples: Matrix::from_vec(v.len(), 1, v),
            })
            .collect();
        RecordingSet::new(vec!["x".into()], recs).unwrap()
    }

    #[test]
    fn population_std_of_one_two_three() {
        let s = fit_normalization(&set(vec![vec![1.0, 2.0, 3.0]])).unwrap();
        assert_eq!(s.mean, vec![2.0]);
        assert!((s.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s.std[0] - 0.8165).abs() < 1e-4);
    }

    #[test]
    fn stats_pool_the_union_of_recordings() {
        // per-recording means are 1 and 11 with equal spread; pooled std is not their average
        let s = fit_normalization(&set(vec![vec![0.0, 2.0], vec![10.0, 12.0, 11.0, 11.0]])).unwrap();
        let all = [0.0, 2.0, 10.0, 12.0, 11.0, 11.0];
        let m = all.iter().sum::<f64>() / 6.0;
        let sd = (all.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 6.0).sqrt();
        assert!((s.mean[0] - m).abs() < 1e-12);
        assert!((s.std[0] - sd).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let rs = set(vec![vec![4.0; 10]]);
        let s = fit_normalization(&rs).unwrap();
        assert_eq!(s.std, vec![0.0]);
        let out = apply_normalization(&rs, &s).unwrap();
        assert!(out.recordings[0].samples.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let rs = set(vec![vec![1.0, 2.0]]);
        let mut s = fit_normalization(&rs).unwrap();
        s.channels = vec!["y".into()];
        assert!(apply_normalization(&rs, &s).is_err());
    }

    #[test]
    fn other_splits_are_not_renormalized() {
        let train = set(vec![vec![1.0, 2.0, 3.0]]);
        let s = fit_normalization(&train).unwrap();
        let test = apply_normalization(&set(vec![vec![5.0, 5.0]]), &s).unwrap();
        assert!(test.recordings[0].samples.get(0, 0) > 3.0);
    }
}
