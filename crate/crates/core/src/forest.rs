//! Random-forest baseline: CART trees on Gini impurity with bootstrap
//! sampling and sqrt-D feature subsampling per split. Trials enter as
//! flattened 1479-dimensional vectors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AUTrial, AU_ROWS, FRAMES};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::seeds::{rng_for, subseed};

#[derive(Debug, Clone, Serialize, Deserialize)]
enum Node {
    Leaf { class: u8 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn vote(&self, features: &[f64]) -> u8 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { class } => return *class,
                Node::Split { feature, threshold, left, right } => {
                    at = if features[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }
}

/// A fitted forest. Probability of "stuttered" is the fraction of trees
/// voting for it, so predictions are multiples of 1/n_trees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub config: ModelConfig,
    trees: Vec<Tree>,
    n_features: usize,
}

struct TreeBuilder<'d> {
    features: &'d [f64],
    labels: &'d [u8],
    n_features: usize,
    max_depth: usize,
    features_per_split: usize,
}

impl<'d> TreeBuilder<'d> {
    fn leaf_class(&self, samples: &[usize]) -> u8 {
        let positives = samples.iter().filter(|&&s| self.labels[s] == 1).count();
        u8::from(2 * positives >= samples.len())
    }

    fn gini(pos: f64, total: f64) -> f64 {
        if total == 0.0 {
            return 0.0;
        }
        let p = pos / total;
        2.0 * p * (1.0 - p)
    }

    /// Best (threshold, weighted child impurity) for one feature, or None
    /// when the feature is constant on this node.
    fn best_split_on(&self, samples: &mut [usize], feature: usize) -> Option<(f64, f64)> {
        samples.sort_unstable_by(|&a, &b| {
            let fa = self.features[a * self.n_features + feature];
            let fb = self.features[b * self.n_features + feature];
            fa.partial_cmp(&fb).expect("finite features")
        });
        let n = samples.len() as f64;
        let total_pos = samples.iter().filter(|&&s| self.labels[s] == 1).count() as f64;
        let mut left_pos = 0.0;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..samples.len() - 1 {
            if self.labels[samples[i]] == 1 {
                left_pos += 1.0;
            }
            let a = self.features[samples[i] * self.n_features + feature];
            let b = self.features[samples[i + 1] * self.n_features + feature];
            if a == b {
                continue;
            }
            let left_n = (i + 1) as f64;
            let right_n = n - left_n;
            let impurity = left_n / n * Self::gini(left_pos, left_n)
                + right_n / n * Self::gini(total_pos - left_pos, right_n);
            if best.map_or(true, |(_, bi)| impurity < bi) {
                best = Some((0.5 * (a + b), impurity));
            }
        }
        best
    }

    fn grow(&self, nodes: &mut Vec<Node>, samples: &mut Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let first = self.labels[samples[0]];
        let pure = samples.iter().all(|&s| self.labels[s] == first);
        if pure || depth >= self.max_depth || samples.len() < 2 {
            let class = self.leaf_class(samples);
            nodes.push(Node::Leaf { class });
            return nodes.len() - 1;
        }

        // Partial Fisher-Yates draw of candidate features.
        let mut pool: Vec<usize> = (0..self.n_features).collect();
        let mut best: Option<(usize, f64, f64)> = None;
        for k in 0..self.features_per_split {
            let j = rng.gen_range(k..pool.len());
            pool.swap(k, j);
            let feature = pool[k];
            if let Some((threshold, impurity)) = self.best_split_on(samples, feature) {
                if best.map_or(true, |(_, _, bi)| impurity < bi) {
                    best = Some((feature, threshold, impurity));
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            let class = self.leaf_class(samples);
            nodes.push(Node::Leaf { class });
            return nodes.len() - 1;
        };

        let (mut left, mut right): (Vec<usize>, Vec<usize>) = samples
            .iter()
            .partition(|&&s| self.features[s * self.n_features + feature] <= threshold);
        debug_assert!(!left.is_empty() && !right.is_empty());
        let slot = nodes.len();
        nodes.push(Node::Leaf { class: 0 }); // placeholder
        let left_idx = self.grow(nodes, &mut left, depth + 1, rng);
        let right_idx = self.grow(nodes, &mut right, depth + 1, rng);
        nodes[slot] = Node::Split { feature, threshold, left: left_idx, right: right_idx };
        slot
    }
}

/// Flattens trials into an `[N, 17*87]` feature matrix plus labels.
pub fn flatten_trials(trials: &[AUTrial], indices: &[usize]) -> (Vec<f64>, Vec<u8>) {
    let d = AU_ROWS * FRAMES;
    let mut features = Vec::with_capacity(indices.len() * d);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        features.extend_from_slice(trials[i].matrix.data());
        labels.push(trials[i].label.as_u8());
    }
    (features, labels)
}

impl Forest {
    /// Fits `config.rf_trees` CART trees on bootstrap resamples. Trees train
    /// in parallel from per-tree seeds, so the forest is deterministic under
    /// `config.seed`.
    pub fn fit(config: &ModelConfig, features: &[f64], labels: &[u8]) -> Result<Forest> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::InvalidArgument("random forest: empty training set".into()));
        }
        if features.len() % labels.len() != 0 {
            return Err(Error::shape(
                "random forest features",
                &[labels.len()],
                &[features.len()],
            ));
        }
        let n_features = features.len() / labels.len();
        let n = labels.len();
        let features_per_split = ((n_features as f64).sqrt().floor() as usize).max(1);

        let trees: Vec<Tree> = (0..config.rf_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng_for(subseed(config.seed, "rf"), &format!("tree{t}"));
                let mut samples: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                let builder = TreeBuilder {
                    features,
                    labels,
                    n_features,
                    max_depth: config.rf_max_depth,
                    features_per_split,
                };
                let mut nodes = Vec::new();
                builder.grow(&mut nodes, &mut samples, 0, &mut rng);
                Tree { nodes }
            })
            .collect();

        Ok(Forest {
            config: config.clone(),
            trees,
            n_features,
        })
    }

    pub fn fit_trials(config: &ModelConfig, trials: &[AUTrial], indices: &[usize]) -> Result<Forest> {
        let (features, labels) = flatten_trials(trials, indices);
        Forest::fit(config, &features, &labels)
    }

    /// Probability of "stuttered" per sample: the fraction of trees voting 1.
    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() % self.n_features != 0 {
            return Err(Error::shape(
                "random forest prediction",
                &[self.n_features],
                &[features.len()],
            ));
        }
        let n = features.len() / self.n_features;
        let inv = 1.0 / self.trees.len() as f64;
        Ok((0..n)
            .map(|i| {
                let row = &features[i * self.n_features..(i + 1) * self.n_features];
                let votes: usize = self.trees.iter().map(|t| t.vote(row) as usize).sum();
                votes as f64 * inv
            })
            .collect())
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Cross-validation outcome for the forest baseline.
#[derive(Debug)]
pub struct ForestCrossValidation {
    pub report: crate::metrics::MetricsReport,
    pub fold_forests: Vec<Forest>,
    pub best_fold: usize,
}

/// Fits one forest per fold and evaluates each on the shared hold-out test
/// set, mirroring the CNN cross-validation harness.
pub fn rf_cross_validate_with_plan(
    trials: &[AUTrial],
    plan: &crate::split::SplitPlan,
    config: &ModelConfig,
) -> Result<ForestCrossValidation> {
    use crate::metrics::{accuracy, auc_roc, f1_score, threshold_predictions, FoldMetrics, MetricsReport};

    let (test_features, test_labels) = flatten_trials(trials, &plan.test);
    let mut fold_forests = Vec::new();
    let mut fold_metrics = Vec::new();
    for fold in &plan.folds {
        let mut cfg = config.clone();
        cfg.seed = subseed(config.seed, &format!("fold{}", fold.index));
        let forest = Forest::fit_trials(&cfg, trials, &fold.train)?;
        let probs = forest.predict_proba(&test_features)?;
        let preds = threshold_predictions(&probs);
        fold_metrics.push(FoldMetrics {
            fold: fold.index,
            accuracy: accuracy(&preds, &test_labels),
            auc_roc: auc_roc(&probs, &test_labels)?,
            f1: f1_score(&preds, &test_labels),
        });
        fold_forests.push(forest);
    }
    let best_fold = fold_metrics
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.auc_roc.partial_cmp(&b.1.auc_roc).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(ForestCrossValidation {
        report: MetricsReport::from_folds(fold_metrics),
        fold_forests,
        best_fold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;
    use rand::Rng;

    fn rf_config(trees: usize, seed: u64) -> ModelConfig {
        let mut cfg = ModelConfig::new(Architecture::Rf).with_seed(seed);
        cfg.rf_trees = trees;
        cfg
    }

    #[test]
    fn single_class_training_predicts_it_everywhere() {
        let features = vec![0.1, 0.9, 0.4, 0.6, 0.8, 0.2];
        let labels = vec![1, 1, 1];
        let forest = Forest::fit(&rf_config(25, 3), &features, &labels).unwrap();
        let probs = forest.predict_proba(&[0.5, 0.5, 0.0, 1.0]).unwrap();
        assert_eq!(probs, vec![1.0, 1.0]);
    }

    #[test]
    fn xor_dataset_is_learned() {
        let mut rng = rng_for(11, "xor");
        let n = 200;
        let mut features = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.gen_range(0.0..1.0);
            let y: f64 = rng.gen_range(0.0..1.0);
            features.push(x);
            features.push(y);
            labels.push(u8::from((x > 0.5) ^ (y > 0.5)));
        }
        let forest = Forest::fit(&rf_config(100, 5), &features, &labels).unwrap();
        let probs = forest.predict_proba(&features).unwrap();
        let hits = probs
            .iter()
            .zip(labels.iter())
            .filter(|(&p, &l)| u8::from(p >= 0.5) == l)
            .count();
        let acc = hits as f64 / n as f64;
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn same_seed_gives_identical_forests() {
        let mut rng = rng_for(2, "det");
        let n = 60;
        let features: Vec<f64> = (0..n * 4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let a = Forest::fit(&rf_config(40, 9), &features, &labels).unwrap();
        let b = Forest::fit(&rf_config(40, 9), &features, &labels).unwrap();
        let pa = a.predict_proba(&features).unwrap();
        let pb = b.predict_proba(&features).unwrap();
        assert_eq!(pa, pb);
        let c = Forest::fit(&rf_config(40, 10), &features, &labels).unwrap();
        let pc = c.predict_proba(&features).unwrap();
        assert_ne!(pa, pc);
    }

    #[test]
    fn probabilities_are_multiples_of_tree_fraction() {
        let mut rng = rng_for(7, "frac");
        let n = 50;
        let features: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let forest = Forest::fit(&rf_config(8, 1), &features, &labels).unwrap();
        let probs = forest.predict_proba(&features).unwrap();
        for p in probs {
            let scaled = p * 8.0;
            assert!((scaled - scaled.round()).abs() < 1e-12, "{p} not a multiple of 1/8");
        }
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(Forest::fit(&rf_config(10, 1), &[], &[]).is_err());
    }
}
