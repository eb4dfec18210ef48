use std::path::Path;

use serde::Serialize;

use super::metrics::MetricsReport;
use super::sweep::SweepResult;
use crate::error::{Error, Result};

/// Pretty-printed JSON with a trailing newline. Field order follows the type
/// definitions, so equal values always produce equal bytes.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One row per sweep setting and seed.
pub fn write_sweep_csv(path: &Path, results: &[SweepResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["axis", "arm", "setting", "seed", "mean_f1"])?;
    for r in results {
        let axis = serde_json::to_value(r.axis)?;
        let axis = axis.as_str().unwrap_or_default();
        for p in &r.points {
            for (seed, f1) in p.seeds.iter().zip(&p.mean_f1) {
                w.write_record([axis, &r.arm, &p.setting, &seed.to_string(), &f1.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-class scores followed by a `mean` row.
pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["class", "precision", "recall", "f1", "support"])?;
    for c in &report.per_class {
        w.write_record([c.class.to_string(), c.precision.to_string(), c.recall.to_string(), c.f1.to_string(), c.support.to_string()])?;
    }
    w.write_record(["mean".to_string(), String::new(), String::new(), report.mean_f1.to_string(), report.total().to_string()])?;
    w.flush().map_err(|e| Error::io(path, e))
}
