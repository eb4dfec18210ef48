use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::RecordingSet;
use crate::error::{Error, Result};
use crate::nn::seeded_rng;

const TEST_FRACTION: f64 = 0.20;
const VAL_FRACTION: f64 = 0.20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum SplitPolicy {
    /// 20% of subjects to test, then 20% of the remainder to validation.
    #[default]
    Fractional,
    FixedList { train: Vec<String>, val: Vec<String>, test: Vec<String> },
}


impl SplitPolicy {
    /// Subjects 1-10 train, 11-12 validation, 13-14 test.
    pub fn usc_had() -> Self {
        let ids = |r: std::ops::RangeInclusive<u32>| r.map(|i| i.to_string()).collect();
        SplitPolicy::FixedList { train: ids(1..=10), val: ids(11..=12), test: ids(13..=14) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub seed: u64,
    pub policy: SplitPolicy,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

pub fn split_by_subject(rs: &RecordingSet, policy: &SplitPolicy, seed: u64) -> Result<SplitAssignment> {
    let all = rs.subjects();
    let (train, val, test) = match policy {
        SplitPolicy::Fractional => {
            let n = all.len();
            let n_test = round_half_up(TEST_FRACTION * n as f64);
            let n_val = round_half_up(VAL_FRACTION * (n - n_test) as f64);
            if n_test == 0 || n_val == 0 || n_test + n_val >= n {
                return Err(Error::Data(format!(
                    "{n} subjects cannot fill non-empty train/val/test splits ({n_test} test, {n_val} val)"
                )));
            }
            let mut order: Vec<String> = all.iter().cloned().collect();
            order.shuffle(&mut seeded_rng(seed, 0x5917));
            let test: BTreeSet<String> = order[..n_test].iter().cloned().collect();
            let val: BTreeSet<String> = order[n_test..n_test + n_val].iter().cloned().collect();
            let train: BTreeSet<String> = order[n_test + n_val..].iter().cloned().collect();
            (train, val, test)
        }
        SplitPolicy::FixedList { train, val, test } => {
            let sets: [BTreeSet<String>; 3] =
                [train.iter().cloned().collect(), val.iter().cloned().collect(), test.iter().cloned().collect()];
            for (i, a) in sets.iter().enumerate() {
                for b in sets.iter().skip(i + 1) {
                    if let Some(s) = a.intersection(b).next() {
                        return Err(Error::InvalidArgument(format!("subject {s} listed in two splits")));
                    }
                }
            }
            let listed: BTreeSet<String> = sets.iter().flatten().cloned().collect();
            if let Some(s) = all.difference(&listed).next() {
                return Err(Error::Data(format!("subject {s} is not assigned to any split")));
            }
            if let Some(s) = listed.difference(&all).next() {
                return Err(Error::Data(format!("split lists subject {s} which has no recording")));
            }
            let [tr, va, te] = sets;
            (tr, va, te)
        }
    };
    Ok(SplitAssignment { train, val, test, seed, policy: policy.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Recording;
    use crate::tensor::Matrix;

    fn subjects(ids: impl IntoIterator<Item = String>) -> RecordingSet {
        let recordings = ids
            .into_iter()
            .map(|s| Recording {
                subject_id: s,
                sample_rate_hz: 30.0,
                samples: Matrix::zeros(2, 1),
                labels: vec![None, None],
            })
            .collect();
        RecordingSet::new(vec!["x".into()], recordings).unwrap()
    }

    #[test]
    fn thirty_subjects_fractional_counts() {
        let rs = subjects((0..30).map(|i| format!("p{i}")));
        let s = split_by_subject(&rs, &SplitPolicy::Fractional, 7).unwrap();
        assert_eq!((s.test.len(), s.val.len(), s.train.len()), (6, 5, 19));
        let union: BTreeSet<_> = s.train.union(&s.val).chain(s.test.iter()).cloned().collect();
        assert_eq!(union, rs.subjects());
        assert!(s.train.is_disjoint(&s.val) && s.train.is_disjoint(&s.test) && s.val.is_disjoint(&s.test));
        assert_eq!(split_by_subject(&rs, &SplitPolicy::Fractional, 7).unwrap(), s);
        assert_ne!(split_by_subject(&rs, &SplitPolicy::Fractional, 8).unwrap().test, s.test);
    }

    #[test]
    fn usc_had_fixed_split() {
        let rs = subjects((1..=14).map(|i| i.to_string()));
        let s = split_by_subject(&rs, &SplitPolicy::usc_had(), 0).unwrap();
        let want = |r: std::ops::RangeInclusive<u32>| r.map(|i| i.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(s.train, want(1..=10));
        assert_eq!(s.val, want(11..=12));
        assert_eq!(s.test, want(13..=14));
    }

    #[test]
    fn too_few_subjects_is_an_error() {
        assert!(split_by_subject(&subjects((0..2).map(|i| i.to_string())), &SplitPolicy::Fractional, 0).is_err());
        // 3 subjects: one goes to test, round(0.4) = 0 leaves validation empty
        assert!(split_by_subject(&subjects((0..3).map(|i| i.to_string())), &SplitPolicy::Fractional, 0).is_err());
        assert!(split_by_subject(&subjects((0..4).map(|i| i.to_string())), &SplitPolicy::Fractional, 0).is_ok());
    }

    #[test]
    fn fixed_list_must_cover_every_subject() {
        let rs = subjects((1..=15).map(|i| i.to_string()));
        assert!(split_by_subject(&rs, &SplitPolicy::usc_had(), 0).is_err());
    }
}
