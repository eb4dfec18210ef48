//! Adam with bias correction, and the step-decay learning-rate schedule.

use crate::autograd::Gradients;
use crate::params::{ParamKind, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Option<Matrix<S>>>,
    v: Vec<Option<Matrix<S>>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable tensor that has a gradient.
    pub fn step(&mut self, params: &mut ParamStore<S>, grads: &Gradients<S>) {
        if self.m.len() < params.len() {
            self.m.resize(params.len(), None);
            self.v.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::cast(self.beta1);
        let b2 = S::cast(self.beta2);
        let c1 = S::cast(1.0 - self.beta1.powi(t));
        let c2 = S::cast(1.0 - self.beta2.powi(t));
        let lr = S::cast(self.lr);
        let eps = S::cast(self.eps);
        let one = S::one();
        for (slot, g) in grads.iter() {
            if params.entry(slot).kind != ParamKind::Trainable {
                continue;
            }
            let (rows, cols) = g.shape();
            let m = self.m[slot].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let v = self.v[slot].get_or_insert_with(|| Matrix::zeros(rows, cols));
            let p = params.value_mut(slot);
            for (((pv, &gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// `base * factor^floor(epoch / every)`.
pub fn step_decay(base: f64, factor: f64, every: usize, epoch: usize) -> f64 {
    base * factor.powi((epoch / every.max(1)) as i32)
}
