use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{Recording, RecordingSet};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

struct Pending {
    subject: String,
    timestamps: Vec<f64>,
    rows: Vec<f64>,
    labels: Vec<Option<usize>>,
}

/// Reads one or more canonical CSV files
/// (`subject,timestamp,<channel...>,label`; label `-1` = unlabeled).
pub fn load_recordings<P: AsRef<Path>>(paths: &[P]) -> Result<RecordingSet> {
    let mut channels: Option<Vec<String>> = None;
    let mut pending: Vec<Pending> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();

    for path in paths {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header.is_empty() || header.iter().all(String::is_empty) {
            continue;
        }
        let file_channels = parse_header(path, &header)?;
        match &channels {
            None => channels = Some(file_channels),
            Some(c) if *c != file_channels => {
                return Err(Error::Data(format!(
                    "{}: inconsistent channels: {} columns {:?}, expected {} {:?}",
                    path.display(),
                    file_channels.len(),
                    file_channels,
                    c.len(),
                    c
                )));
            }
            Some(_) => {}
        }
        let n_ch = header.len() - 3;
        let mut current: Option<Pending> = None;
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let perr = |message: String| Error::Parse { path: PathBuf::from(path), line, message };
            if record.len() != header.len() {
                return Err(perr(format!("expected {} fields, found {}", header.len(), record.len())));
            }
            let subject = record[0].to_owned();
            let ts: f64 = record[1].parse().map_err(|_| perr(format!("bad timestamp {:?}", &record[1])))?;
            if !ts.is_finite() {
                return Err(perr("non-finite timestamp".into()));
            }
            let mut values = Vec::with_capacity(n_ch);
            for (i, field) in record.iter().skip(2).take(n_ch).enumerate() {
                let v: f64 = field.parse().map_err(|_| perr(format!("bad value {field:?} in channel {}", i)))?;
                if !v.is_finite() {
                    return Err(perr(format!("non-finite value in channel {}", header[i + 2])));
                }
                values.push(v);
            }
            let raw_label = &record[header.len() - 1];
            let label: i64 = raw_label.parse().map_err(|_| perr(format!("bad label {raw_label:?}")))?;
            let label = match label {
                -1 => None,
                l if l >= 0 => Some(l as usize),
                l => return Err(perr(format!("label {l} is neither a class index nor -1"))),
            };

            let same = current.as_ref().is_some_and(|c| c.subject == subject);
            if !same {
                if let Some(done) = current.take() {
                    pending.push(done);
                }
                if !seen.insert(subject.clone()) {
                    return Err(perr(format!("rows for subject {subject} are not contiguous")));
                }
                current = Some(Pending { subject, timestamps: Vec::new(), rows: Vec::new(), labels: Vec::new() });
            }
            let cur = current.as_mut().expect("current recording");
            if let Some(&prev) = cur.timestamps.last() {
                if ts <= prev {
                    return Err(perr(format!("non-monotonic timestamp {ts} after {prev} for subject {}", cur.subject)));
                }
            }
            cur.timestamps.push(ts);
            cur.rows.extend(values);
            cur.labels.push(label);
        }
        if let Some(done) = current.take() {
            pending.push(done);
        }
    }

    let channels = channels.ok_or(Error::NoRecordings)?;
    if pending.is_empty() {
        return Err(Error::NoRecordings);
    }
    let rates: Vec<Option<f64>> = pending.iter().map(|p| infer_rate(&p.timestamps)).collect();
    let fallback = rates.iter().flatten().copied().next();
    let mut recordings = Vec::with_capacity(pending.len());
    for (p, rate) in pending.into_iter().zip(rates) {
        let rate = rate.or(fallback).ok_or_else(|| {
            Error::Data("cannot infer a sample rate: every recording has a single row".into())
        })?;
        let n = p.timestamps.len();
        recordings.push(Recording {
            subject_id: p.subject,
            sample_rate_hz: rate,
            samples: Matrix::from_vec(n, channels.len(), p.rows),
            labels: p.labels,
        });
    }
    RecordingSet::new(channels, recordings)
}

fn parse_header(path: &Path, header: &[String]) -> Result<Vec<String>> {
    let bad = |m: &str| Error::Parse { path: path.to_path_buf(), line: 1, message: m.to_owned() };
    if header.len() < 4 {
        return Err(bad("header needs subject,timestamp,<channels...>,label"));
    }
    if header[0] != "subject" || header[1] != "timestamp" || header[header.len() - 1] != "label" {
        return Err(bad("header must start with subject,timestamp and end with label"));
    }
    Ok(header[2..header.len() - 1].to_vec())
}

/// Mean rate over the recording, rounded to micro-hertz.
fn infer_rate(ts: &[f64]) -> Option<f64> {
    if ts.len() < 2 {
        return None;
    }
    let span = ts[ts.len() - 1] - ts[0];
    let rate = (ts.len() - 1) as f64 / span;
    Some((rate * 1e6).round() / 1e6)
}

/// Writes a recording set in the canonical format; timestamps are `i / rate`.
pub fn write_recordings(rs: &RecordingSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{other:?}")),
    })?;
    let mut header = vec!["subject".to_owned(), "timestamp".to_owned()];
    header.extend(rs.channels.iter().cloned());
    header.push("label".to_owned());
    w.write_record(&header)?;
    for r in &rs.recordings {
        for i in 0..r.len() {
            let mut row = Vec::with_capacity(header.len());
            row.push(r.subject_id.clone());
            row.push(format!("{}", i as f64 / r.sample_rate_hz));
            row.extend(r.samples.row(i).iter().map(|v| format!("{v}")));
            row.push(r.labels[i].map_or_else(|| "-1".to_owned(), |l| l.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn canonical(subjects: &[&str], rows: usize, channels: usize) -> String {
        let mut s = String::from("subject,timestamp");
        for c in 0..channels {
            s.push_str(&format!(",ch{c}"));
        }
        s.push_str(",label\n");
        for subj in subjects {
            for i in 0..rows {
                s.push_str(&format!("{subj},{}", i as f64 / 30.0));
                for c in 0..channels {
                    s.push_str(&format!(",{}", (i * c) as f64 * 0.01));
                }
                s.push_str(&format!(",{}\n", i % 3));
            }
        }
        s
    }

    #[test]
    fn two_subjects_by_300_rows_by_6_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", &canonical(&["1", "2"], 300, 6));
        let rs = load_recordings(&[p]).unwrap();
        assert_eq!(rs.recordings.len(), 2);
        for r in &rs.recordings {
            assert_eq!(r.samples.shape(), (300, 6));
            assert!((r.sample_rate_hz - 30.0).abs() < 1e-9);
        }
        assert_eq!(rs.channels.len(), 6);
    }

    #[test]
    fn empty_file_has_no_recordings() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", "");
        assert!(matches!(load_recordings(&[p]), Err(Error::NoRecordings)));
        let q = write(dir.path(), "h.csv", "subject,timestamp,x,label\n");
        assert!(matches!(load_recordings(&[q]), Err(Error::NoRecordings)));
    }

    #[test]
    fn nan_sample_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "n.csv", "subject,timestamp,x,y,label\ns,0,1,2,0\ns,0.1,NaN,2,0\n");
        match load_recordings(&[p]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        assert!(matches!(load_recordings(&[missing]), Err(Error::Io { .. })));
        let a = write(dir.path(), "a.csv", "subject,timestamp,x,label\ns,0,1,0\ns,1,1,0\n");
        let b = write(dir.path(), "b.csv", "subject,timestamp,x,y,label\nt,0,1,2,0\nt,1,1,2,0\n");
        assert!(matches!(load_recordings(&[a, b]), Err(Error::Data(_))));
        let c = write(dir.path(), "c.csv", "subject,timestamp,x,label\ns,0,1,0\ns,0,1,0\n");
        assert!(matches!(load_recordings(&[c]), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_then_load_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", &canonical(&["x", "y"], 40, 2));
        let rs = load_recordings(&[&p]).unwrap();
        let out = dir.path().join("b.csv");
        write_recordings(&rs, &out).unwrap();
        assert_eq!(load_recordings(&[out]).unwrap(), rs);
    }
}
