use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricsReport};
use super::stats::{summarize, Summary};
use crate::classifier::{predict, train_classifier, train_end_to_end, FinetuneConfig, FreezePolicy};
use crate::cpc::{evaluate_pretext, pretrain, CpcModel, EpochRecord, PretrainConfig};
use crate::data::{sample_labeled_subset, PreparedData, WindowDataset};
use crate::encoders::EncoderSpec;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::scalar::Scalar;

/// Label budgets of the semi-supervised protocol.
pub const DEFAULT_BUDGETS: [usize; 7] = [1, 2, 5, 10, 25, 50, 100];
pub const DEFAULT_HORIZONS: [usize; 5] = [2, 4, 8, 12, 16];
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

const RANDOM_BACKBONE_STREAM: u64 = 0x4a7d;

pub fn default_encoder_specs() -> Vec<EncoderSpec> {
    use crate::encoders::RecurrentCell;
    let mut v = vec![EncoderSpec::fully_connected()];
    v.extend([3, 5, 7, 9].map(EncoderSpec::conv1d));
    v.push(EncoderSpec::recurrent(RecurrentCell::Lstm));
    v.push(EncoderSpec::recurrent(RecurrentCell::Gru));
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LabelsPerClass,
    KHorizon,
    EncoderSpec,
    FreezePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setting: String,
    pub seeds: Vec<u64>,
    /// Test mean F1 per seed, aligned with `seeds`.
    pub mean_f1: Vec<f64>,
    pub summary: Summary,
    /// Per seed, pretext accuracy at each future step on the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretext_step_accuracy: Option<Vec<Vec<f64>>>,
    /// Test reports per seed, including confusion matrices.
    pub reports: Vec<MetricsReport>,
}

impl SweepPoint {
    fn new(setting: String, runs: Vec<(u64, MetricsReport)>, pretext: Option<Vec<Vec<f64>>>) -> Self {
        let seeds = runs.iter().map(|r| r.0).collect();
        let mean_f1: Vec<f64> = runs.iter().map(|r| r.1.mean_f1).collect();
        let summary = summarize(&mean_f1);
        Self { setting, seeds, mean_f1, summary, pretext_step_accuracy: pretext, reports: runs.into_iter().map(|r| r.1).collect() }
    }

    /// Median over seeds of the pretext accuracy at future step `step` (1-based).
    pub fn median_step_accuracy(&self, step: usize) -> Option<f64> {
        let acc = self.pretext_step_accuracy.as_ref()?;
        let xs: Vec<f64> = acc.iter().filter_map(|a| a.get(step.checked_sub(1)?).copied()).collect();
        (xs.len() == acc.len() && !xs.is_empty()).then(|| super::stats::median(&xs))
    }
}

/// One curve: a setting axis, the arm that produced it, and a point per setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub arm: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn point(&self, setting: &str) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.setting == setting)
    }

    pub fn median(&self, setting: &str) -> Option<f64> {
        self.point(setting).map(|p| p.summary.median)
    }
}

/// Worker count for sweep fan-out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parallelism {
    pub threads: usize,
}

impl Parallelism {
    pub fn serial() -> Self {
        Self { threads: 1 }
    }

    /// Serial in deterministic mode; otherwise the machine's parallelism,
    /// capped by `CPC_SEQ_THREADS` when set.
    pub fn from_env(deterministic: bool) -> Self {
        if deterministic {
            return Self::serial();
        }
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cap = std::env::var("CPC_SEQ_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0);
        Self { threads: cap.map_or(available, |c| c.min(available)) }
    }

    /// Maps `f` over `jobs`, keeping input order.
    pub fn map<J: Sync, T: Send>(&self, jobs: &[J], f: impl Fn(&J) -> Result<T> + Sync) -> Result<Vec<T>> {
        if self.threads <= 1 || jobs.len() <= 1 {
            return jobs.iter().map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker threads: {e}")))?;
        pool.install(|| jobs.par_iter().map(&f).collect())
    }
}

/// Shared knobs for every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub seeds: Vec<u64>,
    pub finetune: FinetuneConfig,
    /// Labels per class for ablation runs; `None` uses every training label.
    pub label_budget: Option<usize>,
    pub parallelism: Parallelism,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self { seeds: DEFAULT_SEEDS.to_vec(), finetune: FinetuneConfig::default(), label_budget: None, parallelism: Parallelism::serial() }
    }
}

impl SweepSettings {
    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one seed".into()));
        }
        Ok(())
    }

    fn finetune_for(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig { seed, ..self.finetune.clone() }
    }
}

/// A pre-trained backbone and its training trace.
#[derive(Debug, Clone)]
pub struct Pretrained<S: Scalar> {
    pub model: CpcModel<S>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Memoizes pre-training by configuration so several sweeps can share runs.
pub struct BackbonePool<S: Scalar> {
    entries: Mutex<BTreeMap<String, Arc<Pretrained<S>>>>,
}

impl<S: Scalar> Default for BackbonePool<S> {
    fn default() -> Self {
        Self { entries: Mutex::new(BTreeMap::new()) }
    }
}

impl<S: Scalar> BackbonePool<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("pool lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pre-trains on the training split (validation split for model
    /// selection) unless an identical configuration already ran.
    pub fn get(&self, config: &PretrainConfig, data: &PreparedData) -> Result<Arc<Pretrained<S>>> {
        let key = serde_json::to_string(config)?;
        if let Some(hit) = self.entries.lock().expect("pool lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        info!("pre-training {} K={} seed {}", config.encoder.label(), config.horizon, config.seed);
        let out = pretrain::<S>(config, &data.train, Some(&data.val), |_| {})?;
        let entry = Arc::new(Pretrained { model: out.model, history: out.history, best_epoch: out.best_epoch });
        Ok(Arc::clone(self.entries.lock().expect("pool lock").entry(key).or_insert(entry)))
    }
}

fn labeled_train(data: &PreparedData, budget: Option<usize>, seed: u64) -> Result<WindowDataset> {
    let labeled = data.train.labeled();
    match budget {
        Some(b) => sample_labeled_subset(&labeled, b, seed),
        None => Ok(labeled),
    }
}

fn test_report<S: Scalar>(model: &crate::classifier::ClassifierModel<S>, test: &WindowDataset) -> Result<MetricsReport> {
    let test = test.labeled();
    compute_metrics(&test.dense_labels()?, &predict(model, &test)?, test.num_classes)
}

/// Frozen-feature classification of one backbone, scored on the test split.
fn frozen_probe<S: Scalar>(
    backbone: &CpcModel<S>,
    data: &PreparedData,
    policy: FreezePolicy,
    budget: Option<usize>,
    finetune: &FinetuneConfig,
) -> Result<MetricsReport> {
    let train = labeled_train(data, budget, finetune.seed)?;
    let val = data.val.labeled();
    let out = train_classifier(backbone, &train, Some(&val), policy, finetune)?;
    test_report(&out.model, &data.test)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    Pretrained,
    RandomInit,
    EndToEnd,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Pretrained => "cpc",
            Arm::RandomInit => "random_init",
            Arm::EndToEnd => "end_to_end",
        }
    }
}

/// Test mean F1 against labels per class. Each seed draws its own label
/// subset and head initialization. The random-init arm swaps the backbone for
/// an untrained one of the same architecture; the end-to-end arm trains the
/// whole network from scratch.
pub fn semi_supervised_sweep<S: Scalar>(
    backbone: &CpcModel<S>,
    data: &PreparedData,
    budgets: &[usize],
    arms: &[Arm],
    settings: &SweepSettings,
) -> Result<Vec<SweepResult>> {
    settings.check()?;
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(Error::InvalidArgument("label budgets must be a non-empty list of positive counts".into()));
    }
    let mut budgets = budgets.to_vec();
    budgets.sort_unstable();
    budgets.dedup();
    let mut jobs = Vec::new();
    for &arm in arms {
        for &b in &budgets {
            for &s in &settings.seeds {
                jobs.push((arm, b, s));
            }
        }
    }
    let reports = settings.parallelism.map(&jobs, |&(arm, budget, seed)| {
        let ft = settings.finetune_for(seed);
        let report = match arm {
            Arm::Pretrained => frozen_probe(backbone, data, FreezePolicy::EncLe3PlusGar, Some(budget), &ft)?,
            Arm::RandomInit => {
                let random = CpcModel::<S>::new(&backbone.arch, &mut seeded_rng(seed, RANDOM_BACKBONE_STREAM))?;
                frozen_probe(&random, data, FreezePolicy::EncLe3PlusGar, Some(budget), &ft)?
            }
            Arm::EndToEnd => {
                let train = labeled_train(data, Some(budget), seed)?;
                let out = train_end_to_end::<S>(&backbone.arch, &train, Some(&data.val.labeled()), &ft)?;
                test_report(&out.model, &data.test)?
            }
        };
        info!("{} budget {budget} seed {seed}: mean F1 {:.4}", arm.label(), report.mean_f1);
        Ok(report)
    })?;
    let mut it = jobs.iter().zip(reports);
    Ok(arms
        .iter()
        .map(|&arm| SweepResult {
            axis: SweepAxis::LabelsPerClass,
            arm: arm.label().into(),
            points: budgets
                .iter()
                .map(|b| {
                    let runs = it.by_ref().take(settings.seeds.len()).map(|(j, r)| (j.2, r)).collect();
                    SweepPoint::new(b.to_string(), runs, None)
                })
                .collect(),
        })
        .collect())
}

/// Pre-trains one backbone per spec and seed; records test-split pretext
/// accuracy per future step and frozen-feature test F1.
pub fn ablation_encoders<S: Scalar>(
    pool: &BackbonePool<S>,
    data: &PreparedData,
    base: &PretrainConfig,
    specs: &[EncoderSpec],
    settings: &SweepSettings,
) -> Result<SweepResult> {
    settings.check()?;
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no encoder specs to compare".into()));
    }
    for s in specs {
        let p = s.validate();
        if !p.is_empty() {
            return Err(Error::InvalidArgument(format!("{}: {}", s.label(), p.join("; "))));
        }
    }
    let configs: Vec<PretrainConfig> = specs.iter().map(|s| PretrainConfig { encoder: s.clone(), ..base.clone() }).collect();
    let points = pretrain_and_probe(pool, data, &configs, settings, true)?;
    Ok(SweepResult {
        axis: SweepAxis::EncoderSpec,
        arm: "cpc".into(),
        points: specs.iter().zip(points).map(|(s, (runs, acc))| SweepPoint::new(s.label(), runs, acc)).collect(),
    })
}

/// Downstream F1 against the number of predicted future steps.
pub fn ablation_horizon<S: Scalar>(
    pool: &BackbonePool<S>,
    data: &PreparedData,
    base: &PretrainConfig,
    horizons: &[usize],
    settings: &SweepSettings,
) -> Result<SweepResult> {
    settings.check()?;
    if horizons.is_empty() {
        return Err(Error::InvalidArgument("no horizons to compare".into()));
    }
    if let Some(&k) = horizons.iter().find(|&&k| k == 0 || k >= data.steps()) {
        return Err(Error::InvalidArgument(format!("horizon leaves no context: K = {k} with T = {}", data.steps())));
    }
    let configs: Vec<PretrainConfig> = horizons.iter().map(|&k| PretrainConfig { horizon: k, ..base.clone() }).collect();
    let points = pretrain_and_probe(pool, data, &configs, settings, false)?;
    Ok(SweepResult {
        axis: SweepAxis::KHorizon,
        arm: "cpc".into(),
        points: horizons.iter().zip(points).map(|(k, (runs, _))| SweepPoint::new(k.to_string(), runs, None)).collect(),
    })
}

type ProbeRuns = (Vec<(u64, MetricsReport)>, Option<Vec<Vec<f64>>>);

fn pretrain_and_probe<S: Scalar>(
    pool: &BackbonePool<S>,
    data: &PreparedData,
    configs: &[PretrainConfig],
    settings: &SweepSettings,
    with_pretext: bool,
) -> Result<Vec<ProbeRuns>> {
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| settings.seeds.iter().map(move |&s| (i, s))).collect();
    let results = settings.parallelism.map(&jobs, |&(i, seed)| {
        let cfg = PretrainConfig { seed, ..configs[i].clone() };
        let backbone = pool.get(&cfg, data)?;
        let pretext = if with_pretext {
            Some(evaluate_pretext(&backbone.model, &data.test, cfg.batch_size, seed)?.step_accuracy)
        } else {
            None
        };
        let report = frozen_probe(&backbone.model, data, FreezePolicy::EncLe3PlusGar, settings.label_budget, &settings.finetune_for(seed))?;
        Ok((seed, report, pretext))
    })?;
    let mut it = results.into_iter();
    Ok(configs
        .iter()
        .map(|_| {
            let chunk: Vec<_> = it.by_ref().take(settings.seeds.len()).collect();
            let acc = with_pretext.then(|| chunk.iter().map(|c| c.2.clone().unwrap_or_default()).collect());
            (chunk.into_iter().map(|(s, r, _)| (s, r)).collect(), acc)
        })
        .collect())
}

/// Test F1 and confusion matrices for each freeze policy on one backbone.
pub fn ablation_freeze<S: Scalar>(
    backbone: &CpcModel<S>,
    data: &PreparedData,
    policies: &[FreezePolicy],
    settings: &SweepSettings,
) -> Result<SweepResult> {
    settings.check()?;
    let jobs: Vec<(FreezePolicy, u64)> = policies.iter().flat_map(|&p| settings.seeds.iter().map(move |&s| (p, s))).collect();
    let reports = settings.parallelism.map(&jobs, |&(policy, seed)| {
        frozen_probe(backbone, data, policy, settings.label_budget, &settings.finetune_for(seed))
    })?;
    let mut it = jobs.iter().zip(reports);
    Ok(SweepResult {
        axis: SweepAxis::FreezePolicy,
        arm: "cpc".into(),
        points: policies
            .iter()
            .map(|p| {
                let runs = it.by_ref().take(settings.seeds.len()).map(|(j, r)| (j.1, r)).collect();
                SweepPoint::new(p.label().into(), runs, None)
            })
            .collect(),
    })
}
