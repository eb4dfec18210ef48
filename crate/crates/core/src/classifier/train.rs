use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{ClassifierMeta, ClassifierModel, FeatureCache};
use super::FreezePolicy;
use crate::checkpoint::Checkpoint;
use crate::cpc::{CpcArchitecture, CpcModel};
use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricsReport};
use crate::nn::{seeded_rng, Graph, Mode};
use crate::optim::{step_decay, Adam};
use crate::params::ParamStore;
use crate::scalar::{argmax, Scalar};

const INIT_STREAM: u64 = 0xc1f0;
const SHUFFLE_STREAM: u64 = 0xc1f1;
const DROPOUT_STREAM: u64 = 0xc1f2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    /// Grid of base learning rates; the best by validation F1 is kept.
    pub learning_rates: Vec<f64>,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    pub head_dropout: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rates: vec![5e-4, 1e-4],
            epochs: 150,
            decay_factor: 0.8,
            decay_every: 25,
            batch_size: 64,
            head_dropout: 0.2,
            seed: 0,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.learning_rates.is_empty() {
            v.push("learning-rate grid is empty".into());
        }
        if self.learning_rates.iter().any(|lr| !(*lr >= 0.0)) {
            v.push("learning rates must be non-negative".into());
        }
        if self.batch_size == 0 {
            v.push("fine-tuning batch size must be positive".into());
        }
        if self.decay_every == 0 || !(self.decay_factor > 0.0) {
            v.push("learning-rate decay needs a positive factor and interval".into());
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            v.push("head dropout outside [0, 1)".into());
        }
        v
    }

    pub fn learning_rate(&self, base: f64, epoch: usize) -> f64 {
        step_decay(base, self.decay_factor, self.decay_every, epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub val_mean_f1: Option<f64>,
}

/// Training trace for one entry of the learning-rate grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRateRun {
    pub base_learning_rate: f64,
    pub history: Vec<FinetuneEpoch>,
    pub best_epoch: Option<usize>,
    pub val_mean_f1: Option<f64>,
}

pub struct FinetuneOutcome<S: Scalar> {
    pub model: ClassifierModel<S>,
    pub learning_rate: f64,
    pub best_epoch: Option<usize>,
    pub runs: Vec<LearningRateRun>,
    pub validation: Option<MetricsReport>,
    pub meta: ClassifierMeta,
}

impl<S: Scalar> FinetuneOutcome<S> {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        self.model.to_checkpoint(&self.meta)
    }
}

fn cached_predictions<S: Scalar>(model: &ClassifierModel<S>, cache: &FeatureCache<S>) -> Vec<usize> {
    let logits = model.cached_logits(cache);
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}

fn check_labels(ds: &WindowDataset, num_classes: usize, what: &str) -> Result<Vec<usize>> {
    let y = ds.dense_labels()?;
    if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Data(format!("{what} label {bad} is outside 0..{num_classes}")));
    }
    Ok(y)
}

struct Split<S> {
    cache: FeatureCache<S>,
    labels: Vec<usize>,
}

/// One pass of the grid entry `base_lr`; returns the selected parameters.
fn train_one<S: Scalar>(
    model: &mut ClassifierModel<S>,
    train: &Split<S>,
    val: Option<&Split<S>>,
    config: &FinetuneConfig,
    base_lr: f64,
    on_epoch: &mut dyn FnMut(&FinetuneEpoch),
) -> Result<(LearningRateRun, ParamStore<S>)> {
    let mut shuffle_rng = seeded_rng(config.seed, SHUFFLE_STREAM);
    let mut dropout_rng = seeded_rng(config.seed, DROPOUT_STREAM);
    let mut opt = Adam::<S>::new(base_lr);
    let mask = model.trainable_mask();
    let mut order: Vec<usize> = (0..train.labels.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore<S>)> = None;

    for epoch in 0..config.epochs {
        opt.lr = config.learning_rate(base_lr, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let targets: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (grads, updates) = {
                let mut g = Graph::with_trainable(&model.params, mask.clone(), Mode::Train, Some(&mut dropout_rng));
                let x = g.tape.constant(train.cache.batch(chunk));
                let logits = model.logits_from_prefix(&mut g, x, train.cache.steps, chunk.len());
                let loss = g.tape.cross_entropy(logits, &targets);
                let value = g.tape.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: bi });
                }
                loss_sum += value.to_f64_lossy();
                (g.tape.backward(loss)?, g.take_buffer_updates())
            };
            opt.step(&mut model.params, &grads);
            for (slot, value) in updates {
                *model.params.value_mut(slot) = value;
            }
            batches += 1;
        }
        let val_f1 = match val {
            Some(v) => Some(compute_metrics(&v.labels, &cached_predictions(model, &v.cache), model.num_classes())?.mean_f1),
            None => None,
        };
        let record = FinetuneEpoch { epoch, learning_rate: opt.lr, train_loss: loss_sum / batches.max(1) as f64, val_mean_f1: val_f1 };
        log::debug!("finetune lr {base_lr:e} epoch {epoch}: loss {:.5} val f1 {:?}", record.train_loss, record.val_mean_f1);
        // without validation data the last epoch is kept
        let score = val_f1.unwrap_or(f64::INFINITY);
        if val_f1.is_none() || best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.params.clone()));
        }
        on_epoch(&record);
        history.push(record);
    }
    let (best_epoch, params) = match best {
        Some((_, e, p)) => (Some(e), p),
        None => (None, model.params.clone()),
    };
    let val_mean_f1 = match (val, best_epoch) {
        (Some(_), Some(e)) => history[e].val_mean_f1,
        (Some(v), None) => Some(compute_metrics(&v.labels, &cached_predictions(model, &v.cache), model.num_classes())?.mean_f1),
        (None, _) => None,
    };
    Ok((LearningRateRun { base_learning_rate: base_lr, history, best_epoch, val_mean_f1 }, params))
}

/// Fits the head (and whatever `policy` leaves trainable) with cross-entropy.
/// Every grid entry starts from the same initialization, drawn from
/// `config.seed`; the entry with the highest validation mean F1 wins, or the
/// lowest final training loss when no validation set is given.
pub fn train_classifier<S: Scalar>(
    backbone: &CpcModel<S>,
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    policy: FreezePolicy,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome<S>> {
    train_classifier_with(backbone, train, val, policy, config, |_, _| {})
}

/// [`train_classifier`] reporting each finished epoch with its grid learning rate.
pub fn train_classifier_with<S: Scalar>(
    backbone: &CpcModel<S>,
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    policy: FreezePolicy,
    config: &FinetuneConfig,
    mut on_epoch: impl FnMut(f64, &FinetuneEpoch),
) -> Result<FinetuneOutcome<S>> {
    let problems = config.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidArgument(problems.join("; ")));
    }
    if train.is_empty() {
        return Err(Error::Data("labeled training set is empty".into()));
    }
    let num_classes = train.num_classes;
    let init = || {
        ClassifierModel::<S>::new(
            &backbone.arch,
            policy,
            num_classes,
            config.head_dropout,
            &backbone.params,
            &mut seeded_rng(config.seed, INIT_STREAM),
        )
    };
    let template = init()?;
    let train_split = Split { labels: check_labels(train, num_classes, "training")?, cache: template.feature_cache(train)? };
    let val_split = match val.filter(|v| !v.is_empty()) {
        Some(v) => Some(Split { labels: check_labels(v, num_classes, "validation")?, cache: template.feature_cache(v)? }),
        None => None,
    };

    let mut runs = Vec::new();
    let mut chosen: Option<(usize, ClassifierModel<S>)> = None;
    for (i, &lr) in config.learning_rates.iter().enumerate() {
        let mut model = template.clone();
        let (run, params) = train_one(&mut model, &train_split, val_split.as_ref(), config, lr, &mut |e| on_epoch(lr, e))?;
        model.params = params;
        let better = match &chosen {
            None => true,
            Some((j, _)) => {
                let prev: &LearningRateRun = &runs[*j];
                match (run.val_mean_f1, prev.val_mean_f1) {
                    (Some(a), Some(b)) => a > b,
                    _ => final_loss(&run) < final_loss(prev),
                }
            }
        };
        info!("finetune {policy} lr {lr:e}: val mean F1 {:?}", run.val_mean_f1);
        runs.push(run);
        if better {
            chosen = Some((i, model));
        }
    }
    let (i, model) = chosen.expect("non-empty learning-rate grid");
    let validation = match &val_split {
        Some(v) => Some(compute_metrics(&v.labels, &cached_predictions(&model, &v.cache), num_classes)?),
        None => None,
    };
    let meta = ClassifierMeta {
        kind: ClassifierMeta::KIND.into(),
        architecture: backbone.arch.clone(),
        policy,
        num_classes,
        finetune: config.clone(),
        learning_rate: runs[i].base_learning_rate,
        best_epoch: runs[i].best_epoch,
    };
    Ok(FinetuneOutcome { model, learning_rate: runs[i].base_learning_rate, best_epoch: runs[i].best_epoch, runs, validation, meta })
}

fn final_loss(run: &LearningRateRun) -> f64 {
    run.history.last().map_or(f64::INFINITY, |e| e.train_loss)
}

/// Fully supervised baseline with the same network, trained from scratch.
/// Identical to [`train_classifier`] with [`FreezePolicy::None`] on any
/// backbone of this architecture, since that policy re-initializes everything.
pub fn train_end_to_end<S: Scalar>(
    arch: &CpcArchitecture,
    train: &WindowDataset,
    val: Option<&WindowDataset>,
    config: &FinetuneConfig,
) -> Result<FinetuneOutcome<S>> {
    let scratch = CpcModel::<S>::new(arch, &mut seeded_rng(config.seed, INIT_STREAM))?;
    train_classifier(&scratch, train, val, FreezePolicy::None, config)
}
