use std::cell::RefCell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{Command, Precision, RunConfig, SweepKind};
use crate::checkpoint::Checkpoint;
use crate::classifier::{predict, train_classifier_with, ClassifierModel, FinetuneEpoch, LearningRateRun};
use crate::cpc::{evaluate_pretext, pretrain, CpcCheckpointMeta, CpcModel, EpochRecord, PretextEval};
use crate::data::{
    generate_synthetic, load_recordings, prepare, sample_labeled_subset, write_recordings, NormalizationStats, PreparedData,
    RecordingSet, SplitAssignment, WindowDataset,
};
use crate::error::{Error, Result};
use crate::eval::{
    ablation_encoders, ablation_freeze, ablation_horizon, compute_metrics, semi_supervised_sweep, sweep_svg, write_json,
    write_metrics_csv, write_sweep_csv, Arm, BackbonePool, MetricsReport, Parallelism, SweepResult, SweepSettings,
};
use crate::scalar::Scalar;

/// Line-oriented run log, flushed after every line.
struct RunLog {
    file: BufWriter<File>,
    path: PathBuf,
}

impl RunLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file: BufWriter::new(file), path })
    }

    fn line(&mut self, text: &str) -> Result<()> {
        info!("{text}");
        writeln!(self.file, "{text}").and_then(|_| self.file.flush()).map_err(|e| Error::io(&self.path, e))
    }
}

pub(super) fn execute(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_json(&out.join("config.json"), cfg)?;
    match cfg.precision {
        Precision::F32 => execute_as::<f32>(cfg, out),
        Precision::F64 => execute_as::<f64>(cfg, out),
    }
}

fn execute_as<S: Scalar>(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut log = RunLog::create(out.join("log.txt"))?;
    match cfg.command.unwrap_or(Command::Pretrain) {
        Command::Synth => synth(cfg, out, &mut log),
        Command::Pretrain => pretrain_cmd::<S>(cfg, out, &mut log),
        Command::Finetune => finetune_cmd::<S>(cfg, out, &mut log),
        Command::Evaluate => evaluate_cmd::<S>(cfg, out, &mut log),
        Command::Sweep => sweep_cmd::<S>(cfg, out, &mut log),
    }
}

fn recordings(cfg: &RunConfig) -> Result<RecordingSet> {
    if cfg.data.recordings.is_empty() {
        generate_synthetic(&cfg.data.synthetic)
    } else {
        load_recordings(&cfg.data.recordings)
    }
}

fn prepared(cfg: &RunConfig, log: &mut RunLog) -> Result<PreparedData> {
    let data = prepare(&recordings(cfg)?, &cfg.pipeline, cfg.split_seed())?;
    log.line(&format!(
        "data: {} train / {} val / {} test windows, T = {}, {} channels, {} classes",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.steps(),
        data.channels(),
        data.num_classes()
    ))?;
    Ok(data)
}

fn load_checkpoint(cfg: &RunConfig) -> Result<(Checkpoint, String)> {
    let path = cfg.checkpoint.as_ref().ok_or_else(|| Error::InvalidArgument("no checkpoint given".into()))?;
    let ck = Checkpoint::load(path)?;
    let digest = Sha256::digest(ck.to_bytes());
    Ok((ck, digest.iter().map(|b| format!("{b:02x}")).collect()))
}

/// The run configuration without output and checkpoint locations, so that
/// reports of identical runs match byte for byte wherever they are written.
fn portable(cfg: &RunConfig) -> RunConfig {
    RunConfig { out: None, checkpoint: None, ..cfg.clone() }
}

fn synth(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let rs = generate_synthetic(&cfg.data.synthetic)?;
    let path = out.join("recordings.csv");
    write_recordings(&rs, &path)?;
    log.line(&format!("wrote {} recordings to {}", rs.recordings.len(), path.display()))
}

#[derive(Serialize)]
struct PretrainReport<'a> {
    config: RunConfig,
    split: &'a SplitAssignment,
    normalization: &'a NormalizationStats,
    best_epoch: Option<usize>,
    test_pretext: PretextEval,
}

fn pretrain_cmd<S: Scalar>(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = prepared(cfg, log)?;
    let history_path = out.join("history.json");
    let history: RefCell<Vec<EpochRecord>> = RefCell::new(Vec::new());
    write_json(&history_path, &*history.borrow())?;
    let log = RefCell::new(log);
    let mut io_error = None;
    let result = pretrain::<S>(&cfg.pretrain, &data.train, Some(&data.val), |r| {
        history.borrow_mut().push(r.clone());
        let line = format!(
            "pretrain epoch {} train_loss {:.6} val_loss {} val_step1_acc {}",
            r.epoch,
            r.train_loss,
            r.val_loss.map_or("-".into(), |v| format!("{v:.6}")),
            r.val_step_accuracy.first().map_or("-".into(), |v| format!("{v:.4}"))
        );
        let written = log.borrow_mut().line(&line).and_then(|_| write_json(&history_path, &*history.borrow()));
        if let Err(e) = written {
            io_error.get_or_insert(e);
        }
    });
    let log = log.into_inner();
    if let Some(e) = io_error {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            write_json(&history_path, &*history.borrow())?;
            log.line(&format!("stopped: {e}"))?;
            return Err(e);
        }
    };
    outcome.checkpoint.save(&out.join("checkpoint.bin"))?;
    write_json(&history_path, &outcome.history)?;
    let test_pretext = evaluate_pretext(&outcome.model, &data.test, cfg.pretrain.batch_size, cfg.seed)?;
    log.line(&format!(
        "best epoch {:?}; test pretext loss {:.6}, step accuracy {:?}",
        outcome.best_epoch,
        test_pretext.loss,
        test_pretext.step_accuracy.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>()
    ))?;
    write_json(
        &out.join("report.json"),
        &PretrainReport { config: portable(cfg), split: &data.split, normalization: &data.stats, best_epoch: outcome.best_epoch, test_pretext },
    )
}

fn backbone<S: Scalar>(ck: &Checkpoint, data: &PreparedData) -> Result<CpcModel<S>> {
    let (model, _meta): (CpcModel<S>, CpcCheckpointMeta) = CpcModel::from_checkpoint(ck)?;
    if model.arch.input_channels != data.channels() {
        return Err(Error::Data(format!(
            "checkpoint expects {} channels, data has {}",
            model.arch.input_channels,
            data.channels()
        )));
    }
    Ok(model)
}

fn test_report<S: Scalar>(model: &ClassifierModel<S>, test: &WindowDataset) -> Result<MetricsReport> {
    let test = test.labeled();
    compute_metrics(&test.dense_labels()?, &predict(model, &test)?, model.num_classes())
}

#[derive(Serialize)]
struct FinetuneReport {
    config: RunConfig,
    checkpoint_sha256: String,
    learning_rate: f64,
    best_epoch: Option<usize>,
    train_windows: usize,
    validation: Option<MetricsReport>,
    test: MetricsReport,
}

fn finetune_cmd<S: Scalar>(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let (ck, digest) = load_checkpoint(cfg)?;
    let data = prepared(cfg, log)?;
    let model = backbone::<S>(&ck, &data)?;
    let labeled = data.train.labeled();
    let train = match cfg.label_budget {
        Some(b) => sample_labeled_subset(&labeled, b, cfg.seed)?,
        None => labeled,
    };
    let val = data.val.labeled();
    let history_path = out.join("history.json");
    let runs: RefCell<Vec<LearningRateRun>> = RefCell::new(Vec::new());
    let log = RefCell::new(log);
    let mut io_error = None;
    let result = train_classifier_with(&model, &train, Some(&val), cfg.policy, &cfg.finetune, |lr, e: &FinetuneEpoch| {
        {
            let mut r = runs.borrow_mut();
            if r.last().is_none_or(|run| run.base_learning_rate != lr) {
                r.push(LearningRateRun { base_learning_rate: lr, history: Vec::new(), best_epoch: None, val_mean_f1: None });
            }
            r.last_mut().expect("just pushed").history.push(e.clone());
        }
        let line = format!(
            "finetune lr {lr:e} epoch {} train_loss {:.6} val_mean_f1 {}",
            e.epoch,
            e.train_loss,
            e.val_mean_f1.map_or("-".into(), |v| format!("{v:.4}"))
        );
        let written = log.borrow_mut().line(&line).and_then(|_| write_json(&history_path, &*runs.borrow()));
        if let Err(err) = written {
            io_error.get_or_insert(err);
        }
    });
    let log = log.into_inner();
    if let Some(e) = io_error {
        return Err(e);
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            write_json(&history_path, &*runs.borrow())?;
            log.line(&format!("stopped: {e}"))?;
            return Err(e);
        }
    };
    outcome.checkpoint()?.save(&out.join("classifier.bin"))?;
    write_json(&history_path, &outcome.runs)?;
    let test = test_report(&outcome.model, &data.test)?;
    log.line(&format!("selected lr {:e}; test mean F1 {:.4}", outcome.learning_rate, test.mean_f1))?;
    write_metrics_csv(&out.join("report.csv"), &test)?;
    write_json(
        &out.join("report.json"),
        &FinetuneReport {
            config: portable(cfg),
            checkpoint_sha256: digest,
            learning_rate: outcome.learning_rate,
            best_epoch: outcome.best_epoch,
            train_windows: train.len(),
            validation: outcome.validation,
            test,
        },
    )
}

#[derive(Serialize)]
struct EvaluateReport {
    config: RunConfig,
    checkpoint_sha256: String,
    test: MetricsReport,
}

fn evaluate_cmd<S: Scalar>(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let (ck, digest) = load_checkpoint(cfg)?;
    let (model, _) = ClassifierModel::<S>::from_checkpoint(&ck)?;
    let data = prepared(cfg, log)?;
    let test = test_report(&model, &data.test)?;
    log.line(&format!("test mean F1 {:.4} over {} windows", test.mean_f1, test.total()))?;
    write_metrics_csv(&out.join("report.csv"), &test)?;
    write_json(&out.join("report.json"), &EvaluateReport { config: portable(cfg), checkpoint_sha256: digest, test })
}

#[derive(Serialize)]
struct SweepReport<'a> {
    config: RunConfig,
    checkpoint_sha256: Option<String>,
    results: &'a [SweepResult],
}

fn sweep_cmd<S: Scalar>(cfg: &RunConfig, out: &Path, log: &mut RunLog) -> Result<()> {
    let data = prepared(cfg, log)?;
    let settings = SweepSettings {
        seeds: cfg.sweep.seeds.clone(),
        finetune: cfg.finetune.clone(),
        label_budget: cfg.label_budget,
        parallelism: Parallelism::from_env(cfg.deterministic),
    };
    log.line(&format!("sweep {:?} over seeds {:?} on {} threads", cfg.sweep.kind, settings.seeds, settings.parallelism.threads))?;
    let pool = BackbonePool::<S>::new();
    let checkpoint_digest = RefCell::new(None);
    let shared_backbone = |log: &mut RunLog| -> Result<CpcModel<S>> {
        if cfg.checkpoint.is_some() {
            let (ck, digest) = load_checkpoint(cfg)?;
            *checkpoint_digest.borrow_mut() = Some(digest);
            return backbone(&ck, &data);
        }
        log.line("no checkpoint given; pre-training one from the run configuration")?;
        let p = pool.get(&cfg.pretrain, &data)?;
        let meta = CpcCheckpointMeta {
            kind: CpcCheckpointMeta::KIND.into(),
            architecture: p.model.arch.clone(),
            pretrain: cfg.pretrain.clone(),
            epochs_run: cfg.pretrain.epochs,
            best_epoch: p.best_epoch,
        };
        Checkpoint::new(&meta, &p.model.params)?.save(&out.join("checkpoint.bin"))?;
        Ok(p.model.clone())
    };
    let (results, title) = match cfg.sweep.kind {
        SweepKind::SemiSupervised => {
            let bb = shared_backbone(log)?;
            let mut arms = vec![Arm::Pretrained];
            if cfg.sweep.random_control {
                arms.push(Arm::RandomInit);
            }
            if cfg.sweep.end_to_end {
                arms.push(Arm::EndToEnd);
            }
            (semi_supervised_sweep(&bb, &data, &cfg.sweep.budgets, &arms, &settings)?, "mean F1 vs labels per class")
        }
        SweepKind::Encoders => {
            (vec![ablation_encoders(&pool, &data, &cfg.pretrain, &cfg.sweep.encoders, &settings)?], "mean F1 by encoder")
        }
        SweepKind::Horizon => {
            (vec![ablation_horizon(&pool, &data, &cfg.pretrain, &cfg.sweep.horizons, &settings)?], "mean F1 vs prediction horizon K")
        }
        SweepKind::Freeze => {
            let bb = shared_backbone(log)?;
            (vec![ablation_freeze(&bb, &data, &cfg.sweep.policies, &settings)?], "mean F1 by freeze policy")
        }
    };
    for r in &results {
        for p in &r.points {
            log.line(&format!(
                "{} {}: median {:.4} (min {:.4}, max {:.4}, std {:.4})",
                r.arm, p.setting, p.summary.median, p.summary.min, p.summary.max, p.summary.std
            ))?;
        }
    }
    write_json(&out.join("sweep.json"), &SweepReport { config: portable(cfg), checkpoint_sha256: checkpoint_digest.into_inner(), results: &results })?;
    write_sweep_csv(&out.join("sweep.csv"), &results)?;
    std::fs::write(out.join("sweep.svg"), sweep_svg(&results, title)).map_err(|e| Error::io(out.join("sweep.svg"), e))
}
