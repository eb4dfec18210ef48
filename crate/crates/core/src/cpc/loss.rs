use rand::Rng as _;

use crate::error::{Error, Result};
use crate::scalar::{argmax, log_sum_exp, Scalar};
use crate::tensor::Matrix;
use crate::Rng;

/// Score matrices, one per future step. Entry `(i, m)` scores window `m`'s
/// latent at `t + j` against window `i`'s prediction; the positive is `(i, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLogits<S>(pub Vec<Matrix<S>>);

impl<S: Scalar> StepLogits<S> {
    pub fn steps(&self) -> usize {
        self.0.len()
    }

    fn check(&self) -> Result<usize> {
        let first = self.0.first().ok_or_else(|| Error::Shape("no prediction steps".into()))?;
        let b = first.rows();
        for (j, m) in self.0.iter().enumerate() {
            if m.rows() != m.cols() {
                return Err(Error::Shape(format!("step {}: logits {:?} are not square", j + 1, m.shape())));
            }
            if m.rows() != b {
                return Err(Error::Shape(format!("step {}: batch {} differs from {}", j + 1, m.rows(), b)));
            }
        }
        if b < 2 {
            return Err(Error::Shape("InfoNCE needs at least two windows per batch".into()));
        }
        Ok(b)
    }
}

/// Uniform anchor on `0..=T-K-1`: the context covers latents `0..=t` and the
/// targets `t+1..=t+K` stay inside the window.
pub fn sample_anchor(steps: usize, horizon: usize, rng: &mut Rng) -> Result<usize> {
    if horizon == 0 || steps <= horizon {
        return Err(Error::InvalidArgument(format!(
            "window of {steps} steps leaves no context for a horizon of {horizon}"
        )));
    }
    Ok(rng.random_range(0..steps - horizon))
}

/// Per-step loss `-(1/B) sum_i [l(i,i) - logsumexp_m l(i,m)]`.
pub fn info_nce_per_step<S: Scalar>(logits: &StepLogits<S>) -> Result<Vec<S>> {
    let b = logits.check()?;
    let n = S::cast(b as f64);
    Ok(logits
        .0
        .iter()
        .map(|m| {
            let total: S = (0..b).map(|i| log_sum_exp(m.row(i)) - m.get(i, i)).sum();
            total / n
        })
        .collect())
}

/// Mean of the per-step losses.
pub fn info_nce<S: Scalar>(logits: &StepLogits<S>) -> Result<S> {
    let per = info_nce_per_step(logits)?;
    let k = S::cast(per.len() as f64);
    Ok(per.into_iter().sum::<S>() / k)
}

/// Fraction of rows whose arg-max column is the diagonal, per step
/// (ties go to the lowest column).
pub fn pretext_accuracy<S: Scalar>(logits: &StepLogits<S>) -> Result<Vec<f64>> {
    let b = logits.check()?;
    Ok(logits
        .0
        .iter()
        .map(|m| (0..b).filter(|&i| argmax(m.row(i)) == i).count() as f64 / b as f64)
        .collect())
}
