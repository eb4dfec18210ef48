//! Scoring, the label-budget sweep, the encoder/horizon/freeze ablations, and
//! their JSON, CSV and SVG outputs.

mod metrics;
mod plot;
pub mod reference;
mod report;
mod stats;
mod sweep;

pub use metrics::{compute_metrics, confusion_matrix, metrics_from_confusion, ClassMetrics, MetricsReport};
pub use plot::sweep_svg;
pub use report::{write_json, write_metrics_csv, write_sweep_csv};
pub use stats::{median, summarize, Summary};
pub use sweep::{
    ablation_encoders, ablation_freeze, ablation_horizon, default_encoder_specs, semi_supervised_sweep, Arm, BackbonePool,
    Parallelism, Pretrained, SweepAxis, SweepPoint, SweepResult, SweepSettings, DEFAULT_BUDGETS, DEFAULT_HORIZONS,
    DEFAULT_SEEDS,
};
