//! Acceptance checks, one PASS/FAIL line each. Criteria 1 to 9 gate the exit
//! status. Criterion 10 runs only when `CPC_UCI_HAR` names the canonical
//! UCI-HAR recordings (comma-separated paths).

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;

use common::gradcheck::max_relative_error;
use cpc_core::checkpoint::Checkpoint;
use cpc_core::classifier::{train_classifier, FinetuneConfig, FreezePolicy};
use cpc_core::cpc::{info_nce, CpcCheckpointMeta, CpcModel, PretrainConfig, StepLogits};
use cpc_core::data::{generate_synthetic, load_recordings, prepare, PipelineConfig, PreparedData, SyntheticConfig};
use cpc_core::encoders::{encode, receptive_field, EncoderSpec, ReceptiveField, RecurrentCell};
use cpc_core::eval::{
    ablation_encoders, ablation_horizon, compute_metrics, semi_supervised_sweep, Arm, BackbonePool, Parallelism, SweepSettings,
};
use cpc_core::eval::reference::{UCI_HAR_CONV_MEAN_F1, UCI_HAR_TOLERANCE};
use cpc_core::nn::{seeded_rng, Mode};
use cpc_core::{Matrix, Scalar};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const PRETRAIN_EPOCHS: usize = 10;

enum Outcome {
    Pass(String),
    Fail(String),
}

fn outcome(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

type Check<'a> = Box<dyn FnOnce() -> Result<Outcome, String> + 'a>;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let synthetic = SyntheticData::new();
    let checks: Vec<(&str, &str, Check)> = vec![
        ("1", "InfoNCE identities", Box::new(c1_info_nce)),
        ("2", "gradient oracle", Box::new(c2_gradients)),
        ("3", "conv shape and receptive field", Box::new(c3_receptive_field)),
        ("4", "metric oracle", Box::new(c4_metrics)),
        ("5", "pretext-triviality trends", Box::new(|| synthetic.c5_trends())),
        ("6", "self-supervision benefit", Box::new(|| synthetic.c6_benefit())),
        ("7", "horizon ordering", Box::new(|| synthetic.c7_horizon())),
        ("8", "deterministic pretrain and finetune", Box::new(c8_determinism)),
        ("9", "checkpoint round trip", Box::new(|| synthetic.c9_round_trip())),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let line = match check() {
            Ok(Outcome::Pass(d)) => format!("PASS criterion {id} ({name}): {d}"),
            Ok(Outcome::Fail(d)) => {
                failed += 1;
                format!("FAIL criterion {id} ({name}): {d}")
            }
            Err(e) => {
                failed += 1;
                format!("FAIL criterion {id} ({name}): error: {e}")
            }
        };
        println!("{line} [{:.1}s]", start.elapsed().as_secs_f64());
    }
    match std::env::var("CPC_UCI_HAR") {
        Ok(paths) if !paths.trim().is_empty() => {
            let start = Instant::now();
            let line = match c10_uci_har(&paths) {
                Ok(Outcome::Pass(d)) => format!("PASS criterion 10 (UCI-HAR reproduction, optional): {d}"),
                Ok(Outcome::Fail(d)) => format!("FAIL criterion 10 (UCI-HAR reproduction, optional): {d}"),
                Err(e) => format!("FAIL criterion 10 (UCI-HAR reproduction, optional): error: {e}"),
            };
            println!("{line} [{:.1}s]", start.elapsed().as_secs_f64());
        }
        _ => println!("SKIP criterion 10 (UCI-HAR reproduction, optional): set CPC_UCI_HAR to run"),
    }
    if failed > 0 {
        println!("{failed} gating criteria failed");
        std::process::exit(1);
    }
}

fn uniform_loss<S: Scalar>() -> f64 {
    let logits = StepLogits(vec![Matrix::<S>::from_fn(8, 8, |_, _| S::cast(0.25))]);
    info_nce(&logits).unwrap().to_f64_lossy()
}

fn c1_info_nce() -> Result<Outcome, String> {
    let ln8 = 8f64.ln();
    let e32 = (uniform_loss::<f32>() - ln8).abs();
    let e64 = (uniform_loss::<f64>() - ln8).abs();
    let saturated = StepLogits(vec![Matrix::<f64>::from_fn(8, 8, |r, c| if r == c { 100.0 } else { 0.0 })]);
    let sat = info_nce(&saturated).map_err(|e| e.to_string())?;
    let ok = e32 < 1e-6 && e64 < 1e-12 && sat < 1e-10;
    Ok(outcome(ok, format!("|L - ln 8| = {e32:.2e} (f32), {e64:.2e} (f64); saturated loss {sat:.2e}")))
}

fn c2_gradients() -> Result<Outcome, String> {
    let mut worst = Vec::new();
    let mut ok = true;
    let families = [
        ("conv", EncoderSpec::conv1d(3)),
        ("fc", EncoderSpec::fully_connected()),
        ("gru", EncoderSpec::recurrent(RecurrentCell::Gru)),
        ("lstm", EncoderSpec::recurrent(RecurrentCell::Lstm)),
    ];
    for (seed, (name, mut spec)) in families.into_iter().enumerate() {
        spec.layer_widths = vec![3, 3, 4];
        spec.hidden = 4;
        let (err, n) = max_relative_error(&common::gradcheck::tiny(spec), seed as u64 + 5);
        ok &= err < 1e-5 && n <= 500;
        worst.push(format!("{name} {err:.1e} over {n} params"));
    }
    Ok(outcome(ok, worst.join(", ")))
}

fn random_window(t: usize, c: usize, seed: u64) -> Matrix<f64> {
    let mut rng = seeded_rng(seed, 0xacc3);
    Matrix::from_fn(t, c, |_, _| rng.random_range(-2.0..2.0))
}

fn c3_receptive_field() -> Result<Outcome, String> {
    let channels = 3;
    let mut problems = Vec::new();
    let mut fields = Vec::new();
    for k in [3, 5, 7, 9] {
        let spec = EncoderSpec::conv1d(k);
        let mut params = cpc_core::params::ParamStore::<f64>::new();
        cpc_core::encoders::Encoder::new(&mut params, &spec, channels, &mut seeded_rng(k as u64, 1)).map_err(|e| e.to_string())?;
        for t in 1..=64 {
            let z = encode(&spec, &params, &random_window(t, channels, t as u64), Mode::Eval, None).map_err(|e| e.to_string())?;
            if z.values.rows() != t {
                problems.push(format!("k={k} T={t}: {} latent steps", z.values.rows()));
            }
        }
        let ReceptiveField::Finite(rf) = receptive_field(&spec) else {
            return Err("conv encoder reported an unbounded receptive field".into());
        };
        fields.push(format!("k={k}: {rf}"));
        if (k == 3 && rf != 7) || (k == 9 && rf != 25) {
            problems.push(format!("k={k}: receptive field {rf}"));
        }
        let (t_len, target, radius) = (64, 32usize, (rf - 1) / 2);
        let base = random_window(t_len, channels, 99);
        let z0 = encode(&spec, &params, &base, Mode::Eval, None).map_err(|e| e.to_string())?;
        let mut outside = base.clone();
        let mut inside = base.clone();
        for r in 0..t_len {
            for c in 0..channels {
                if r.abs_diff(target) > radius {
                    outside.set(r, c, base.get(r, c) + 3.0);
                }
            }
        }
        inside.set(target - radius, 0, base.get(target - radius, 0) + 3.0);
        let z_out = encode(&spec, &params, &outside, Mode::Eval, None).map_err(|e| e.to_string())?;
        let z_in = encode(&spec, &params, &inside, Mode::Eval, None).map_err(|e| e.to_string())?;
        let same = z0.values.row(target).iter().zip(z_out.values.row(target)).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            problems.push(format!("k={k}: latent {target} moved under perturbation beyond radius {radius}"));
        }
        if z0.values.row(target) == z_in.values.row(target) {
            problems.push(format!("k={k}: latent {target} ignores input at the edge of its field"));
        }
    }
    let ok = problems.is_empty();
    let detail = if ok { format!("T preserved for 1..=64; fields {}", fields.join(", ")) } else { problems.join("; ") };
    Ok(outcome(ok, detail))
}

/// Counts true positives, false positives and false negatives pair by pair.
fn brute_force(truth: &[usize], pred: &[usize], classes: usize) -> Vec<(f64, f64, f64)> {
    (0..classes)
        .map(|c| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&t, &p) in truth.iter().zip(pred) {
                match (t == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            (precision, recall, f1)
        })
        .collect()
}

fn c4_metrics() -> Result<Outcome, String> {
    let mut rng = seeded_rng(4, 0xacc4);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let classes = rng.random_range(1..=8);
        let n = rng.random_range(1..=200);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
        let report = compute_metrics(&truth, &pred, classes).map_err(|e| e.to_string())?;
        let oracle = brute_force(&truth, &pred, classes);
        let mean = oracle.iter().map(|o| o.2).sum::<f64>() / classes as f64;
        let same = report.per_class.iter().zip(&oracle).all(|(m, o)| (m.precision, m.recall, m.f1) == *o) && report.mean_f1 == mean;
        mismatches += usize::from(!same);
    }
    let constant = compute_metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).map_err(|e| e.to_string())?.mean_f1;
    let ok = mismatches == 0 && (constant - 1.0 / 3.0).abs() < 1e-15;
    Ok(outcome(ok, format!("{mismatches}/1000 mismatches; constant predictor mean F1 {constant:.15}")))
}

fn c8_determinism() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("config.json");
    let config = r#"{
  "data": {"synthetic": {"num_subjects": 5, "duration_s": 40.0}},
  "pretrain": {"epochs": 3, "horizon": 12},
  "finetune": {"epochs": 10}
}"#;
    std::fs::write(&cfg, config).map_err(|e| e.to_string())?;
    let files: &[(&str, &[&str])] = &[
        ("pre", &["checkpoint.bin", "history.json", "report.json"]),
        ("fine", &["classifier.bin", "history.json", "report.json", "report.csv"]),
    ];
    let mut runs = Vec::new();
    for tag in ["a", "b"] {
        let pre = dir.path().join(format!("{tag}-pre"));
        let fine = dir.path().join(format!("{tag}-fine"));
        cli(&["pretrain", "--config", path(&cfg), "--out", path(&pre), "--deterministic", "--seed", "3"])?;
        let ck = pre.join("checkpoint.bin");
        cli(&["finetune", "--config", path(&cfg), "--checkpoint", path(&ck), "--out", path(&fine), "--deterministic", "--seed", "3"])?;
        let mut bytes = Vec::new();
        for (sub, names) in files {
            for name in *names {
                let p = dir.path().join(format!("{tag}-{sub}")).join(name);
                bytes.push((format!("{sub}/{name}"), std::fs::read(&p).map_err(|e| format!("{}: {e}", p.display()))?));
            }
        }
        runs.push(bytes);
    }
    let differing: Vec<&str> = runs[0].iter().zip(&runs[1]).filter(|(a, b)| a.1 != b.1).map(|(a, _)| a.0.as_str()).collect();
    let detail = if differing.is_empty() {
        format!("{} artifacts bit-identical across two runs", runs[0].len())
    } else {
        format!("differing: {}", differing.join(", "))
    };
    Ok(outcome(differing.is_empty(), detail))
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cpc")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("cpc {} exited {:?}: {}", args[0], out.status.code(), String::from_utf8_lossy(&out.stderr).trim()))
    }
}

/// Synthetic corpus and the backbones shared by criteria 5, 6, 7 and 9.
struct SyntheticData {
    data: PreparedData,
    pool: BackbonePool<f32>,
    settings: SweepSettings,
    base: PretrainConfig,
}

impl SyntheticData {
    fn new() -> Self {
        let cfg = SyntheticConfig { num_subjects: 10, duration_s: 60.0, noise_std: 0.5, ..Default::default() };
        let rs = generate_synthetic(&cfg).expect("synthetic corpus");
        let data = prepare(&rs, &PipelineConfig::default(), 0).expect("prepared corpus");
        let settings = SweepSettings {
            seeds: SEEDS.to_vec(),
            finetune: FinetuneConfig::default(),
            label_budget: None,
            parallelism: Parallelism::from_env(false),
        };
        let base = PretrainConfig { encoder: EncoderSpec::conv1d(3), horizon: 12, epochs: PRETRAIN_EPOCHS, ..Default::default() };
        Self { data, pool: BackbonePool::new(), settings, base }
    }

    fn c5_trends(&self) -> Result<Outcome, String> {
        let specs = [
            EncoderSpec::fully_connected(),
            EncoderSpec::conv1d(3),
            EncoderSpec::conv1d(9),
            EncoderSpec::recurrent(RecurrentCell::Gru),
        ];
        let sweep = ablation_encoders(&self.pool, &self.data, &self.base, &specs, &self.settings).map_err(|e| e.to_string())?;
        let step = |label: &str, k: usize| {
            sweep.point(label).and_then(|p| p.median_step_accuracy(k)).ok_or_else(|| format!("no pretext accuracy for {label}"))
        };
        let (fc, gru) = (step("fc", 1)?, step("rnn_gru", 1)?);
        let (k3, k9, k3_last) = (step("conv_k3", 1)?, step("conv_k9", 1)?, step("conv_k3", 12)?);
        let ok = gru > fc && k9 > k3 && k3 > k3_last;
        Ok(outcome(
            ok,
            format!(
                "{} windows; median step-1 accuracy gru {gru:.3} vs fc {fc:.3}, conv_k9 {k9:.3} vs conv_k3 {k3:.3}; conv_k3 step 12 {k3_last:.3}",
                self.data.train.len() + self.data.val.len() + self.data.test.len()
            ),
        ))
    }

    fn c6_benefit(&self) -> Result<Outcome, String> {
        let backbone = self.pool.get(&self.base, &self.data).map_err(|e| e.to_string())?;
        let budgets = [10, 25, 50, 100];
        let curves = semi_supervised_sweep(&backbone.model, &self.data, &budgets, &[Arm::Pretrained, Arm::RandomInit], &self.settings)
            .map_err(|e| e.to_string())?;
        let curve = |arm: Arm| curves.iter().find(|c| c.arm == arm.label()).ok_or_else(|| format!("missing arm {}", arm.label()));
        let (pre, rnd) = (curve(Arm::Pretrained)?, curve(Arm::RandomInit)?);
        let mut ok = true;
        let mut parts = Vec::new();
        for b in budgets {
            let key = b.to_string();
            let (p, r) = (pre.median(&key).ok_or("missing budget")?, rnd.median(&key).ok_or("missing budget")?);
            ok &= p > r;
            if b == 10 {
                ok &= (p - r) * 100.0 >= 5.0;
            }
            parts.push(format!("{b}/class {:.1} vs {:.1}", p * 100.0, r * 100.0));
        }
        Ok(outcome(ok, format!("median mean F1 pretrained vs random: {}", parts.join(", "))))
    }

    fn c7_horizon(&self) -> Result<Outcome, String> {
        let sweep = ablation_horizon(&self.pool, &self.data, &self.base, &[2, 8, 12], &self.settings).map_err(|e| e.to_string())?;
        let m = |k: &str| sweep.median(k).ok_or_else(|| format!("missing K = {k}"));
        let (k2, k8, k12) = (m("2")?, m("8")?, m("12")?);
        Ok(outcome(k2 <= k8.max(k12), format!("median mean F1 K=2 {k2:.3}, K=8 {k8:.3}, K=12 {k12:.3}")))
    }

    fn c9_round_trip(&self) -> Result<Outcome, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let backbone = self.pool.get(&self.base, &self.data).map_err(|e| e.to_string())?;
        let meta = CpcCheckpointMeta {
            kind: CpcCheckpointMeta::KIND.into(),
            architecture: backbone.model.arch.clone(),
            pretrain: self.base.clone(),
            epochs_run: self.base.epochs,
            best_epoch: backbone.best_epoch,
        };
        let cpc_ck = Checkpoint::new(&meta, &backbone.model.params).map_err(|e| e.to_string())?;
        let small = FinetuneConfig { epochs: 2, learning_rates: vec![1e-3], ..Default::default() };
        let outcome_ft = train_classifier(&backbone.model, &self.data.train, None, FreezePolicy::EncLe3PlusGar, &small).map_err(|e| e.to_string())?;
        let clf_ck = outcome_ft.checkpoint().map_err(|e| e.to_string())?;
        let mut sizes = Vec::new();
        for (name, ck) in [("cpc", cpc_ck), ("classifier", clf_ck)] {
            let first = dir.path().join(format!("{name}-1.bin"));
            let second = dir.path().join(format!("{name}-2.bin"));
            ck.save(&first).map_err(|e| e.to_string())?;
            Checkpoint::load(&first).and_then(|c| c.save(&second)).map_err(|e| e.to_string())?;
            let (a, b) = (std::fs::read(&first).map_err(|e| e.to_string())?, std::fs::read(&second).map_err(|e| e.to_string())?);
            if a != b {
                return Ok(Outcome::Fail(format!("{name} checkpoint changed after reload")));
            }
            sizes.push(format!("{name} {} bytes", a.len()));
        }
        Ok(Outcome::Pass(format!("byte-identical: {}", sizes.join(", "))))
    }
}

fn c10_uci_har(paths: &str) -> Result<Outcome, String> {
    let files: Vec<&str> = paths.split(',').map(str::trim).filter(|p| !p.is_empty()).collect();
    let rs = load_recordings(&files).map_err(|e| e.to_string())?;
    let data = prepare(&rs, &PipelineConfig::default(), 0).map_err(|e| e.to_string())?;
    let config = PretrainConfig { encoder: EncoderSpec::conv1d(3), horizon: 12, ..Default::default() };
    let pre = cpc_core::cpc::pretrain::<f32>(&config, &data.train, Some(&data.val), |_| {}).map_err(|e| e.to_string())?;
    let model: CpcModel<f32> = pre.model;
    let ft = train_classifier(&model, &data.train, Some(&data.val), FreezePolicy::EncLe3PlusGar, &FinetuneConfig::default())
        .map_err(|e| e.to_string())?;
    let truth = data.test.dense_labels().map_err(|e| e.to_string())?;
    let pred = cpc_core::classifier::predict(&ft.model, &data.test).map_err(|e| e.to_string())?;
    let f1 = compute_metrics(&truth, &pred, data.num_classes()).map_err(|e| e.to_string())?.mean_f1 * 100.0;
    let gap = (f1 - UCI_HAR_CONV_MEAN_F1).abs();
    Ok(outcome(gap <= UCI_HAR_TOLERANCE, format!("test mean F1 {f1:.2} vs {UCI_HAR_CONV_MEAN_F1} (|diff| {gap:.2})")))
}
