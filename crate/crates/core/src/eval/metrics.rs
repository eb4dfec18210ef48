use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Macro-averaged scores over a fixed class set. `confusion[t][p]` counts
/// windows of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretext_step_accuracy: Option<Vec<f64>>,
}

impl MetricsReport {
    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let hits: u64 = (0..self.num_classes()).map(|c| self.confusion[c][c]).sum();
        hits as f64 / self.total().max(1) as f64
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::Shape(format!("{} true labels vs {} predictions", truth.len(), predicted.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no labels to score".into()));
    }
    let mut m = vec![vec![0u64; num_classes]; num_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= num_classes || p >= num_classes {
            return Err(Error::InvalidArgument(format!("label {} outside 0..{num_classes}", t.max(p))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Scores a confusion matrix. Classes that never occur and are never predicted
/// still count, with F1 = 0, toward the mean.
pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>) -> MetricsReport {
    let n = confusion.len();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassMetrics { class: c, precision, recall, f1, support }
        })
        .collect();
    let mean_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / n.max(1) as f64;
    MetricsReport { mean_f1, per_class, confusion, pretext_step_accuracy: None }
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if num_classes == 0 {
        return Err(Error::InvalidArgument("num_classes must be positive".into()));
    }
    Ok(metrics_from_confusion(confusion_matrix(truth, predicted, num_classes)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions_score_one() {
        let y = [0, 0, 0, 1, 2, 2];
        assert_eq!(compute_metrics(&y, &y, 3).unwrap().mean_f1, 1.0);
    }

    #[test]
    fn constant_predictor_on_two_balanced_classes() {
        let r = compute_metrics(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(r.per_class[0].precision, 0.5);
        assert_eq!(r.per_class[0].recall, 1.0);
        assert!((r.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_class[1].f1, 0.0);
        assert!((r.mean_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_classes_pull_the_mean_down() {
        let r = compute_metrics(&[0, 1], &[0, 1], 4).unwrap();
        assert_eq!(r.mean_f1, 0.5);
        assert_eq!(r.per_class[3].support, 0);
    }

    #[test]
    fn rejects_empty_mismatched_and_out_of_range() {
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[0], &[0, 1], 2).is_err());
        assert!(compute_metrics(&[2], &[0], 2).is_err());
        assert!(compute_metrics(&[0], &[5], 2).is_err());
    }

    #[test]
    fn uniform_random_predictor_on_balanced_data() {
        use rand::Rng as _;
        // every class has precision and recall near 1/c, so F1 is near 1/c too
        let c = 4;
        let mut rng = crate::nn::seeded_rng(12, 0);
        let truth: Vec<usize> = (0..10_000).map(|i| i % c).collect();
        let pred: Vec<usize> = truth.iter().map(|_| rng.random_range(0..c)).collect();
        let f1 = compute_metrics(&truth, &pred, c).unwrap().mean_f1;
        assert!((f1 - 1.0 / c as f64).abs() < 0.02, "{f1}");
    }

    fn labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
        (1usize..6).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..80)))
    }

    proptest! {
        #[test]
        fn invariant_under_sample_order((c, pairs) in labels(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut crate::nn::seeded_rng(seed, 0));
            let split = |v: &[(usize, usize)]| -> (Vec<usize>, Vec<usize>) { v.iter().copied().unzip() };
            let (t1, p1) = split(&pairs);
            let (t2, p2) = split(&shuffled);
            prop_assert_eq!(compute_metrics(&t1, &p1, c).unwrap(), compute_metrics(&t2, &p2, c).unwrap());
        }

        #[test]
        fn confusion_is_additive_over_disjoint_parts((c, pairs) in labels(), cut in any::<prop::sample::Index>()) {
            let k = cut.index(pairs.len() + 1);
            prop_assume!(k > 0 && k < pairs.len());
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let whole = confusion_matrix(&t, &p, c).unwrap();
            let a = confusion_matrix(&t[..k], &p[..k], c).unwrap();
            let b = confusion_matrix(&t[k..], &p[k..], c).unwrap();
            for i in 0..c {
                for j in 0..c {
                    prop_assert_eq!(whole[i][j], a[i][j] + b[i][j]);
                }
            }
        }

        #[test]
        fn rows_sum_to_supports((c, pairs) in labels()) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let r = compute_metrics(&t, &p, c).unwrap();
            for m in &r.per_class {
                prop_assert_eq!(r.confusion[m.class].iter().sum::<u64>(), m.support);
                prop_assert_eq!(m.support, t.iter().filter(|&&x| x == m.class).count() as u64);
            }
            prop_assert_eq!(r.total(), t.len() as u64);
            prop_assert!((0.0..=1.0).contains(&r.mean_f1));
        }
    }
}
