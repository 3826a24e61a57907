//! Classification metrics: accuracy, AUC-ROC (Mann-Whitney form), F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AUC of the ROC curve, computed as the Mann-Whitney statistic: the
/// fraction of (positive, negative) pairs where the positive scores higher,
/// ties counting one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "auc_roc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument(
            "auc_roc needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // Average ranks over tied runs; rank sums of halves stay exact in f64.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// F1 score from hard 0/1 predictions: 2TP / (2TP + FP + FN), defined as 0
/// when the denominator is 0.
pub fn f1_score(predictions: &[u8], labels: &[u8]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &l) in predictions.iter().zip(labels.iter()) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

pub fn accuracy(predictions: &[u8], labels: &[u8]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / predictions.len() as f64
}

/// Hard labels from probabilities at the 0.5 threshold.
pub fn threshold_predictions(probabilities: &[f64]) -> Vec<u8> {
    probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect()
}

/// Metrics for one cross-validation fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: f64,
    pub auc_roc: f64,
    pub f1: f64,
}

/// Per-fold metrics plus their mean and (population) standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_auc: f64,
    pub std_auc: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> MetricsReport {
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let auc: Vec<f64> = folds.iter().map(|f| f.auc_roc).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
        let (mean_accuracy, std_accuracy) = mean_std(&acc);
        let (mean_auc, std_auc) = mean_std(&auc);
        let (mean_f1, std_f1) = mean_std(&f1);
        MetricsReport {
            folds,
            mean_accuracy,
            std_accuracy,
            mean_auc,
            std_auc,
            mean_f1,
            std_f1,
        }
    }
}

/// Brute-force Mann-Whitney pair enumeration. Test oracle; kept independent
/// of `auc_roc`'s rank-based path.
pub fn auc_pair_enumeration(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0usize;
    for (i, (&si, &li)) in scores.iter().zip(labels.iter()).enumerate() {
        if li != 1 {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels.iter()).enumerate() {
            if i == j || lj != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfectly_separated_scores() {
        let auc = auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 1.0);
    }

    #[test]
    fn all_ties_give_half() {
        let auc = auc_roc(&[0.5; 6], &[0, 1, 0, 1, 0, 1]).unwrap();
        assert_eq!(auc, 0.5);
    }

    #[test]
    fn four_pair_hand_case() {
        // pairs: (0.35,0.1)+, (0.35,0.4)-, (0.8,0.1)+, (0.8,0.4)+ -> 3/4
        let auc = auc_roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn single_class_rejected() {
        assert!(auc_roc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(auc_roc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn f1_values() {
        assert_eq!(f1_score(&[1, 0, 1, 0], &[1, 0, 1, 0]), 1.0);
        // TP=2, FP=1, FN=1 -> 4/6
        let f1 = f1_score(&[1, 1, 1, 0, 0], &[1, 1, 0, 1, 0]);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        // no positive predictions while positives exist
        assert_eq!(f1_score(&[0, 0, 0], &[1, 1, 0]), 0.0);
    }

    #[test]
    fn constant_classifier_on_balanced_set() {
        let preds = threshold_predictions(&[0.5; 8]);
        let labels = [1, 0, 1, 0, 1, 0, 1, 0];
        assert_eq!(accuracy(&preds, &labels), 0.5);
    }

    #[test]
    fn report_std_zero_for_identical_folds() {
        let folds: Vec<FoldMetrics> = (0..5)
            .map(|fold| FoldMetrics { fold, accuracy: 0.8, auc_roc: 0.9, f1: 0.7 })
            .collect();
        let report = MetricsReport::from_folds(folds);
        assert_eq!(report.std_accuracy, 0.0);
        assert_eq!(report.std_auc, 0.0);
        assert_eq!(report.std_f1, 0.0);
        assert!((report.mean_auc - 0.9).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn rank_path_equals_pair_enumeration(
            scores in proptest::collection::vec(0..100u32, 4..40),
            flips in proptest::collection::vec(any::<bool>(), 4..40),
        ) {
            let n = scores.len().min(flips.len());
            let scores: Vec<f64> = scores[..n].iter().map(|&v| v as f64 / 25.0).collect();
            let mut labels: Vec<u8> = flips[..n].iter().map(|&b| b as u8).collect();
            // force both classes
            labels[0] = 0;
            labels[n - 1] = 1;
            let fast = auc_roc(&scores, &labels).unwrap();
            let slow = auc_pair_enumeration(&scores, &labels);
            prop_assert_eq!(fast, slow);
        }

        #[test]
        fn invariant_under_monotone_transform(
            raw in proptest::collection::vec(-30.0f64..30.0, 6..30),
        ) {
            let n = raw.len();
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let base = auc_roc(&raw, &labels).unwrap();
            let squashed: Vec<f64> = raw.iter().map(|&v| 1.0 / (1.0 + (-0.3 * v).exp())).collect();
            let transformed = auc_roc(&squashed, &labels).unwrap();
            prop_assert!((base - transformed).abs() < 1e-12);
        }
    }
}
