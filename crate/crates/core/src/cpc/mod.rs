//! Contrastive predictive coding: context network, per-step prediction
//! heads, the InfoNCE objective with in-batch negatives, and pre-training.

mod loss;
mod model;
mod train;

pub use loss::{info_nce, info_nce_per_step, pretext_accuracy, sample_anchor, StepLogits};
pub use model::{Autoregressive, CpcArchitecture, CpcForward, CpcModel};
pub use train::{evaluate_pretext, pretrain, CpcCheckpointMeta, EpochRecord, PretextEval, PretrainConfig, PretrainOutcome};
