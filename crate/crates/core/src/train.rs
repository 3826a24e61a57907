//! SGD training with plateau learning-rate scheduling, early stopping,
//! best-epoch weight restoration and 5-fold cross-validation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::AUTrial;
use crate::error::{Error, Result};
use crate::kernels::sigmoid;
use crate::layer::ForwardOpts;
use crate::metrics::{accuracy, auc_roc, f1_score, threshold_predictions, FoldMetrics, MetricsReport};
use crate::model::{bce_loss_and_grad, build_model, stack_batch, Model, ModelConfig};
use crate::seeds::{rng_for, subseed};
use crate::split::{stratified_split, Fold, SplitPlan};
use crate::tensor::Tensor;

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lr0: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_min: f64,
    pub folds: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 256,
            max_epochs: 500,
            early_stop_patience: 30,
            lr0: 0.01,
            lr_factor: 0.5,
            lr_patience: 15,
            lr_min: 1e-6,
            folds: 5,
            test_fraction: 0.20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_min > self.lr0 {
            return Err(Error::InvalidConfig(format!(
                "lr_min {} exceeds lr0 {}",
                self.lr_min, self.lr0
            )));
        }
        if self.lr_patience < 1 || self.early_stop_patience < 1 {
            return Err(Error::InvalidConfig("patience values must be at least 1".into()));
        }
        if !(0.0 < self.test_fraction && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction must be in (0,1); got {}",
                self.test_fraction
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig("folds must be at least 2".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Validation loss must drop by at least this much to count as improvement.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerAction {
    Continue,
    Stop,
}

/// Plateau state machine: the first observation sets the baseline; every
/// epoch that fails to beat the best loss by the improvement threshold ages
/// both counters. Hitting `lr_patience` halves the learning rate (floored at
/// `lr_min`) and resets the reduction counter; hitting
/// `early_stop_patience` stops.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    lr_factor: f64,
    lr_patience: usize,
    lr_min: f64,
    early_stop_patience: usize,
    best: Option<f64>,
    lr_stale: usize,
    es_stale: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: &TrainConfig) -> PlateauScheduler {
        PlateauScheduler {
            lr: cfg.lr0,
            lr_factor: cfg.lr_factor,
            lr_patience: cfg.lr_patience,
            lr_min: cfg.lr_min,
            early_stop_patience: cfg.early_stop_patience,
            best: None,
            lr_stale: 0,
            es_stale: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, val_loss: f64) -> SchedulerAction {
        match self.best {
            None => {
                self.best = Some(val_loss);
                self.lr_stale = 1;
                self.es_stale = 1;
            }
            Some(best) if val_loss < best - IMPROVEMENT_THRESHOLD => {
                self.best = Some(val_loss);
                self.lr_stale = 0;
                self.es_stale = 0;
            }
            _ => {
                self.lr_stale += 1;
                self.es_stale += 1;
            }
        }
        if self.es_stale >= self.early_stop_patience {
            return SchedulerAction::Stop;
        }
        if self.lr_stale >= self.lr_patience {
            self.lr = (self.lr * self.lr_factor).max(self.lr_min);
            self.lr_stale = 0;
        }
        SchedulerAction::Continue
    }
}

/// One epoch of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights the returned model carries (1-based).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn gather(trials: &[AUTrial], indices: &[usize], input_shape: (usize, usize)) -> Result<(Tensor, Vec<u8>)> {
    let matrices: Vec<&Tensor> = indices.iter().map(|&i| &trials[i].matrix).collect();
    let labels: Vec<u8> = indices.iter().map(|&i| trials[i].label.as_u8()).collect();
    Ok((stack_batch(&matrices, input_shape)?, labels))
}

fn eval_loss_and_acc(model: &Model, batch: &Tensor, labels: &[u8]) -> Result<(f64, f64)> {
    let logits = model.predict_logits(batch)?;
    let mut loss = 0.0;
    for (&logit, &y) in logits.iter().zip(labels.iter()) {
        let (l, _) = crate::kernels::sigmoid_bce(logit, y);
        loss += l;
    }
    loss /= labels.len() as f64;
    let probs: Vec<f64> = logits.into_iter().map(sigmoid).collect();
    let acc = accuracy(&threshold_predictions(&probs), labels);
    Ok((loss, acc))
}

/// Trains a fresh copy of `model` by mini-batch SGD on the fold's train
/// split, monitoring validation loss each epoch. Returns the weights from
/// the best-validation-loss epoch.
pub fn train_model(
    model: &Model,
    trials: &[AUTrial],
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<(Model, History)> {
    cfg.validate()?;
    if fold.train.is_empty() || fold.validation.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "fold {} has an empty train or validation set",
            fold.index
        )));
    }
    let input_shape = model.config.input_shape;
    let (train_batch, train_labels) = gather(trials, &fold.train, input_shape)?;
    let (val_batch, val_labels) = gather(trials, &fold.validation, input_shape)?;
    let n_train = train_labels.len();
    let stride: usize = input_shape.0 * input_shape.1;

    let mut work = model.clone();
    let mut shuffle_rng = rng_for(cfg.seed, &format!("train-shuffle:fold{}", fold.index));
    let mut dropout_rng = rng_for(cfg.seed, &format!("dropout:fold{}", fold.index));
    let mut scheduler = PlateauScheduler::new(cfg);

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Model, usize)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = scheduler.lr();
        // Seeded in-epoch shuffle.
        for i in (1..order.len()).rev() {
            use rand::Rng;
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut epoch_hits = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * stride);
            let mut labels = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                data.extend_from_slice(&train_batch.data()[idx * stride..(idx + 1) * stride]);
                labels.push(train_labels[idx]);
            }
            let batch = Tensor::from_vec(&[chunk.len(), 1, input_shape.0, input_shape.1], data)?;
            let trace = work.forward_trace(&batch, ForwardOpts::TRAIN, Some(&mut dropout_rng))?;
            let (loss, upstream) = bce_loss_and_grad(&trace.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            for (&logit, &y) in trace.logits.data().iter().zip(labels.iter()) {
                if u8::from(sigmoid(logit) >= 0.5) == y {
                    epoch_hits += 1;
                }
            }
            let (_, grads) = work.backward(&trace, &upstream, true)?;
            work.sgd_step(&grads, lr)?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / n_train as f64;
        let train_accuracy = epoch_hits as f64 / n_train as f64;

        let (val_loss, val_accuracy) = eval_loss_and_acc(&work, &val_batch, &val_labels)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            lr,
        });

        // Restoration tracks any strict improvement; the scheduler uses the
        // thresholded rule.
        if best.as_ref().map_or(true, |(b, _, _)| val_loss < *b) {
            best = Some((val_loss, work.clone(), epoch));
        }
        if scheduler.observe(val_loss) == SchedulerAction::Stop {
            stopped_early = true;
            break;
        }
    }

    let (_, mut best_model, best_epoch) = best.expect("at least one epoch ran");
    best_model.trained = true;
    Ok((
        best_model,
        History {
            epochs: history,
            best_epoch,
            stopped_early,
        },
    ))
}

/// Everything a cross-validation run produces.
#[derive(Debug)]
pub struct CrossValidation {
    pub report: MetricsReport,
    pub fold_models: Vec<Model>,
    pub histories: Vec<History>,
    pub plan: SplitPlan,
    /// Fold index whose test AUC is highest.
    pub best_fold: usize,
}

/// Cross-validates on a precomputed split plan. Fold models are built from
/// per-fold seeds derived from `model_cfg.seed`, trained in parallel, and
/// each evaluated on the shared hold-out test set.
pub fn cross_validate_with_plan(
    trials: &[AUTrial],
    plan: &SplitPlan,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<CrossValidation> {
    let (test_batch, test_labels) = gather(trials, &plan.test, model_cfg.input_shape)?;

    let outcomes: Vec<Result<(Model, History, FoldMetrics)>> = plan
        .folds
        .par_iter()
        .map(|fold| {
            let mut cfg = model_cfg.clone();
            cfg.seed = subseed(model_cfg.seed, &format!("fold{}", fold.index));
            let model = build_model(&cfg)?;
            let (trained, history) = train_model(&model, trials, fold, train_cfg)?;
            let probs = trained.predict_proba(&test_batch)?;
            let preds = threshold_predictions(&probs);
            let metrics = FoldMetrics {
                fold: fold.index,
                accuracy: accuracy(&preds, &test_labels),
                auc_roc: auc_roc(&probs, &test_labels)?,
                f1: f1_score(&preds, &test_labels),
            };
            Ok((trained, history, metrics))
        })
        .collect();

    let mut fold_models = Vec::new();
    let mut histories = Vec::new();
    let mut fold_metrics = Vec::new();
    for outcome in outcomes {
        let (model, history, metrics) = outcome?;
        fold_models.push(model);
        histories.push(history);
        fold_metrics.push(metrics);
    }
    let best_fold = fold_metrics
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.auc_roc.partial_cmp(&b.1.auc_roc).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(CrossValidation {
        report: MetricsReport::from_folds(fold_metrics),
        fold_models,
        histories,
        plan: plan.clone(),
        best_fold,
    })
}

/// Splits, trains one model per fold, and reports hold-out metrics.
pub fn cross_validate(
    trials: &[AUTrial],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<CrossValidation> {
    let plan = stratified_split(trials, train_cfg)?;
    cross_validate_with_plan(trials, &plan, model_cfg, train_cfg)
}
