use super::{Recording, RecordingSet};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Linear interpolation of every channel onto a uniform `target_hz` grid
/// starting at the first sample. Labels take the nearest source timestep.
pub fn resample(rs: &RecordingSet, target_hz: f64) -> Result<RecordingSet> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::InvalidArgument(format!("target rate {target_hz} must be positive")));
    }
    let recordings = rs.recordings.iter().map(|r| resample_one(r, target_hz)).collect::<Result<Vec<_>>>()?;
    RecordingSet::new(rs.channels.clone(), recordings)
}

fn resample_one(r: &Recording, target_hz: f64) -> Result<Recording> {
    let src_hz = r.sample_rate_hz;
    if !(src_hz > 0.0) {
        return Err(Error::Data(format!("subject {}: unknown source rate", r.subject_id)));
    }
    let n = r.len();
    let c = r.samples.cols();
    // number of grid points inside [0, (n-1)/src_hz], tolerant to rounding at the end
    let span = (n - 1) as f64 * target_hz / src_hz;
    let m = (span + 1e-9).floor() as usize + 1;
    let mut samples = Matrix::zeros(m, c);
    let mut labels = Vec::with_capacity(m);
    for k in 0..m {
        let pos = (k as f64 * src_hz) / target_hz;
        let i0 = (pos.floor() as usize).min(n - 1);
        let frac = pos - i0 as f64;
        let i1 = (i0 + 1).min(n - 1);
        let out = samples.row_mut(k);
        for ch in 0..c {
            let a = r.samples.get(i0, ch);
            let b = r.samples.get(i1, ch);
            out[ch] = if frac == 0.0 { a } else { a + (b - a) * frac };
        }
        let nearest = if frac >= 0.5 { i1 } else { i0 };
        labels.push(r.labels[nearest]);
    }
    Ok(Recording { subject_id: r.subject_id.clone(), sample_rate_hz: target_hz, samples, labels })
}
