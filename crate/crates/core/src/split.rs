//! Stratified hold-out/5-fold splitting with per-fold class balancing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AUTrial, Label};
use crate::error::{Error, Result};
use crate::seeds::rng_for;
use crate::train::TrainConfig;

/// One cross-validation fold over dataset indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    /// Class-balanced training indices.
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Hold-out test set plus per-fold train/validation index lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test: Vec<usize>,
    pub folds: Vec<Fold>,
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Largest-remainder allocation of `total` seats over per-class quotas.
fn allocate(counts: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let mut base: Vec<usize> = counts.iter().map(|&c| (c as f64 * fraction) as usize).collect();
    let mut remainders: Vec<(usize, f64)> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| (i, c as f64 * fraction - base[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let assigned: usize = base.iter().sum();
    for k in 0..total.saturating_sub(assigned) {
        base[remainders[k % counts.len()].0] += 1;
    }
    base
}

/// Seeded stratified split: a hold-out test fraction per class, the
/// remainder cut into `folds` stratified validation folds, and each fold's
/// train set down-sampled to an exact 50/50 class balance.
pub fn stratified_split(trials: &[AUTrial], cfg: &TrainConfig) -> Result<SplitPlan> {
    cfg.validate()?;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, t) in trials.iter().enumerate() {
        by_class[t.label.as_u8() as usize].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        let label = if c == 0 { Label::Fluent } else { Label::Stuttered };
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "class '{label}' is absent from the dataset"
            )));
        }
        if members.len() < cfg.folds {
            return Err(Error::InvalidArgument(format!(
                "class '{label}' has {} trials; need at least {} for {} folds",
                members.len(),
                cfg.folds,
                cfg.folds
            )));
        }
    }

    let mut rng = rng_for(cfg.seed, "split");
    shuffle(&mut by_class[0], &mut rng);
    shuffle(&mut by_class[1], &mut rng);

    let n = trials.len();
    let total_test = (n as f64 * cfg.test_fraction).round() as usize;
    let class_counts = [by_class[0].len(), by_class[1].len()];
    let test_per_class = allocate(&class_counts, cfg.test_fraction, total_test);

    let mut test = Vec::with_capacity(total_test);
    let mut remaining: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for c in 0..2 {
        test.extend_from_slice(&by_class[c][..test_per_class[c]]);
        remaining[c] = by_class[c][test_per_class[c]..].to_vec();
    }

    // Stratified fold validation sets: class c contributes q or q+1 samples
    // per fold, extras going to the earliest folds.
    let mut fold_val: Vec<[Vec<usize>; 2]> = (0..cfg.folds).map(|_| [Vec::new(), Vec::new()]).collect();
    for c in 0..2 {
        let q = remaining[c].len() / cfg.folds;
        let r = remaining[c].len() % cfg.folds;
        let mut cursor = 0;
        for (f, val) in fold_val.iter_mut().enumerate() {
            let size = q + usize::from(f < r);
            val[c] = remaining[c][cursor..cursor + size].to_vec();
            cursor += size;
        }
    }

    let mut folds = Vec::with_capacity(cfg.folds);
    for (f, val) in fold_val.iter().enumerate() {
        let mut train_by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for c in 0..2 {
            for (g, other) in fold_val.iter().enumerate() {
                if g != f {
                    train_by_class[c].extend_from_slice(&other[c]);
                }
            }
        }
        // Balance by seeded down-sampling of the majority class.
        let target = train_by_class[0].len().min(train_by_class[1].len());
        let mut balance_rng = rng_for(cfg.seed, &format!("balance:fold{f}"));
        let mut train = Vec::with_capacity(2 * target);
        for class_members in train_by_class.iter_mut() {
            shuffle(class_members, &mut balance_rng);
            train.extend_from_slice(&class_members[..target]);
        }
        let mut validation: Vec<usize> = val[0].iter().chain(val[1].iter()).copied().collect();
        validation.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { index: f, train, validation });
    }
    test.sort_unstable();
    Ok(SplitPlan { test, folds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Paradigm, AU_ROWS, FRAMES};
    use crate::tensor::Tensor;
    use std::collections::HashSet;

    fn balanced_dataset(n: usize) -> Vec<AUTrial> {
        (0..n)
            .map(|i| AUTrial {
                trial_id: i as u64,
                subject_id: (i % 7) as u32,
                session_id: 1,
                paradigm: Paradigm::Cw,
                label: if i % 2 == 0 { Label::Fluent } else { Label::Stuttered },
                matrix: Tensor::zeros(&[AU_ROWS, FRAMES]),
            })
            .collect()
    }

    #[test]
    fn reproduces_published_partition_sizes() {
        let trials = balanced_dataset(3704);
        let cfg = TrainConfig { seed: 5, ..TrainConfig::default() };
        let plan = stratified_split(&trials, &cfg).unwrap();
        assert_eq!(plan.test.len(), 741);
        assert_eq!(plan.folds.len(), 5);
        for fold in &plan.folds {
            let val = fold.validation.len() as i64;
            assert!((val - 593).abs() <= 1, "validation {val}");
            let train = fold.train.len() as i64;
            assert!((train - 2370).abs() <= 2, "train {train}");
        }
    }

    #[test]
    fn fold_train_sets_are_exactly_balanced() {
        let trials = balanced_dataset(3704);
        let cfg = TrainConfig { seed: 9, ..TrainConfig::default() };
        let plan = stratified_split(&trials, &cfg).unwrap();
        for fold in &plan.folds {
            let stut = fold
                .train
                .iter()
                .filter(|&&i| trials[i].label == Label::Stuttered)
                .count();
            assert_eq!(2 * stut, fold.train.len(), "fold {}", fold.index);
        }
    }

    #[test]
    fn folds_partition_the_non_test_data() {
        let trials = balanced_dataset(500);
        let cfg = TrainConfig { seed: 2, ..TrainConfig::default() };
        let plan = stratified_split(&trials, &cfg).unwrap();
        let test: HashSet<usize> = plan.test.iter().copied().collect();
        let mut seen: HashSet<usize> = HashSet::new();
        for fold in &plan.folds {
            for &v in &fold.validation {
                assert!(!test.contains(&v), "validation overlaps test");
                assert!(seen.insert(v), "validation sets overlap");
            }
            let val: HashSet<usize> = fold.validation.iter().copied().collect();
            for &t in &fold.train {
                assert!(!test.contains(&t), "train overlaps test");
                assert!(!val.contains(&t), "train overlaps its validation fold");
            }
        }
        assert_eq!(seen.len(), trials.len() - test.len());
    }

    #[test]
    fn single_class_rejected() {
        let mut trials = balanced_dataset(40);
        for t in trials.iter_mut() {
            t.label = Label::Fluent;
        }
        let cfg = TrainConfig::default();
        let err = stratified_split(&trials, &cfg).unwrap_err();
        assert!(err.to_string().contains("stuttered"), "{err}");
    }

    #[test]
    fn split_is_deterministic_in_the_seed() {
        let trials = balanced_dataset(300);
        let cfg = TrainConfig { seed: 31, ..TrainConfig::default() };
        let a = stratified_split(&trials, &cfg).unwrap();
        let b = stratified_split(&trials, &cfg).unwrap();
        assert_eq!(a.test, b.test);
        for (fa, fb) in a.folds.iter().zip(b.folds.iter()) {
            assert_eq!(fa.train, fb.train);
            assert_eq!(fa.validation, fb.validation);
        }
        let other = TrainConfig { seed: 32, ..TrainConfig::default() };
        let c = stratified_split(&trials, &other).unwrap();
        assert_ne!(a.test, c.test);
    }
}
