use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{info_nce_per_step, pretext_accuracy, sample_anchor};
use super::model::{CpcArchitecture, CpcModel};
use crate::checkpoint::Checkpoint;
use crate::data::WindowDataset;
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, Mode};
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub encoder: EncoderSpec,
    pub context_dim: usize,
    pub gar_layers: usize,
    pub gar_dropout: f64,
    /// Future steps predicted (`K`).
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::default(),
            context_dim: 256,
            gar_layers: 2,
            gar_dropout: 0.2,
            horizon: 12,
            learning_rate: 1e-3,
            epochs: 150,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn architecture(&self, input_channels: usize) -> CpcArchitecture {
        CpcArchitecture {
            encoder: self.encoder.clone(),
            input_channels,
            context_dim: self.context_dim,
            gar_layers: self.gar_layers,
            gar_dropout: self.gar_dropout,
            horizon: self.horizon,
            head_bias: true,
        }
    }

    /// Every problem that would stop `pretrain` on windows of `steps` timesteps.
    pub fn validate(&self, steps: usize) -> Vec<String> {
        let mut v = self.encoder.validate();
        if self.horizon == 0 {
            v.push("horizon must be at least 1".into());
        } else if steps <= self.horizon {
            v.push(format!("horizon leaves no context: K = {} with T = {steps}", self.horizon));
        }
        if self.batch_size < 2 {
            v.push(format!("no negatives available: batch size {} < 2", self.batch_size));
        }
        if !(self.learning_rate >= 0.0) {
            v.push("learning rate must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.gar_dropout) {
            v.push("context dropout outside [0, 1)".into());
        }
        if self.context_dim == 0 || self.gar_layers == 0 {
            v.push("context network needs positive size and depth".into());
        }
        v
    }
}

/// Configuration embedded in a pre-training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpcCheckpointMeta {
    pub kind: String,
    pub architecture: CpcArchitecture,
    pub pretrain: PretrainConfig,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
}

impl CpcCheckpointMeta {
    pub const KIND: &'static str = "cpc";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_step_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextEval {
    pub loss: f64,
    pub step_accuracy: Vec<f64>,
    pub batches: usize,
}

pub struct PretrainOutcome<S: Scalar> {
    /// Model at the epoch with the lowest validation loss.
    pub model: CpcModel<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub checkpoint: Checkpoint,
}

/// Mean InfoNCE and per-step accuracy in eval mode over consecutive batches.
/// Anchors come from `seed`, so repeated calls agree.
pub fn evaluate_pretext<S: Scalar>(model: &CpcModel<S>, ds: &WindowDataset, batch_size: usize, seed: u64) -> Result<PretextEval> {
    let k = model.arch.horizon;
    let mut rng = seeded_rng(seed, 0xe7a1);
    let mut loss_sum = 0.0;
    let mut acc_sum = vec![0.0; k];
    let mut rows = 0usize;
    let mut batches = 0;
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let t = sample_anchor(ds.steps, k, &mut rng)?;
        let x = ds.batch::<S>(chunk);
        let fwd = model.forward(&x, chunk.len(), t, Mode::Eval, None)?;
        let logits = fwd.step_logits();
        let per_step = info_nce_per_step(&logits)?;
        let acc = pretext_accuracy(&logits)?;
        let b = chunk.len() as f64;
        loss_sum += per_step.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / k as f64 * b;
        for (s, a) in acc_sum.iter_mut().zip(acc) {
            *s += a * b;
        }
        rows += chunk.len();
        batches += 1;
    }
    if rows == 0 {
        return Err(Error::Data("need at least two windows to evaluate the pretext task".into()));
    }
    Ok(PretextEval {
        loss: loss_sum / rows as f64,
        step_accuracy: acc_sum.into_iter().map(|s| s / rows as f64).collect(),
        batches,
    })
}

/// Self-supervised training. `on_epoch` sees each record as soon as it is
/// complete, so callers can persist partial history.
pub fn pretrain<S: Scalar>(
    config: &PretrainConfig,
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<PretrainOutcome<S>> {
    let problems = config.validate(train.steps);
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    if train.len() < config.batch_size {
        return Err(Error::Data(format!(
            "{} training windows is smaller than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    let arch = config.architecture(train.channels);
    let mut model = CpcModel::<S>::new(&arch, &mut seeded_rng(config.seed, 1))?;
    let mut shuffle_rng = seeded_rng(config.seed, 2);
    let mut dropout_rng = seeded_rng(config.seed, 3);
    let mut anchor_rng = seeded_rng(config.seed, 4);
    let mut opt = Adam::<S>::new(config.learning_rate);
    let val = val.filter(|v| v.len() >= 2);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore<S>)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let t = sample_anchor(train.steps, config.horizon, &mut anchor_rng)?;
            let x = train.batch::<S>(chunk);
            let grads = {
                let fwd = model.forward(&x, chunk.len(), t, Mode::Train, Some(&mut dropout_rng))?;
                let loss = fwd.loss();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                loss_sum += loss.to_f64_lossy();
                fwd.backward()?
            };
            opt.step(&mut model.params, &grads);
            n_batches += 1;
        }
        let train_loss = loss_sum / n_batches.max(1) as f64;
        let eval = match val {
            Some(v) => Some(evaluate_pretext(&model, v, config.batch_size, config.seed)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.as_ref().map(|e| e.loss),
            val_step_accuracy: eval.map(|e| e.step_accuracy).unwrap_or_default(),
        };
        info!(
            "pretrain epoch {epoch}: train {:.5} val {}",
            record.train_loss,
            record.val_loss.map_or("-".to_owned(), |v| format!("{v:.5}"))
        );
        let selection = record.val_loss.unwrap_or(record.train_loss);
        if !selection.is_finite() {
            on_epoch(&record);
            return Err(Error::NonFiniteLoss { epoch, batch: n_batches });
        }
        if best.as_ref().is_none_or(|(b, _, _)| selection < *b) {
            best = Some((selection, epoch, model.params.clone()));
        }
        on_epoch(&record);
        history.push(record);
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    let meta = CpcCheckpointMeta {
        kind: CpcCheckpointMeta::KIND.into(),
        architecture: arch,
        pretrain: config.clone(),
        epochs_run: config.epochs,
        best_epoch,
    };
    let checkpoint = Checkpoint::new(&meta, &model.params)?;
    Ok(PretrainOutcome { model, history, best_epoch, checkpoint })
}

impl<S: Scalar> CpcModel<S> {
    /// Rebuilds a model and its metadata from a pre-training checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, CpcCheckpointMeta)> {
        let meta: CpcCheckpointMeta = ck.config()?;
        if meta.kind != CpcCheckpointMeta::KIND {
            return Err(Error::Checkpoint(format!("expected a {} checkpoint, found {}", CpcCheckpointMeta::KIND, meta.kind)));
        }
        let model = Self::from_params(&meta.architecture, &ck.params())?;
        Ok((model, meta))
    }
}
