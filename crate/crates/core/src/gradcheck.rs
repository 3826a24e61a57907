//! Finite-difference verification of the analytic backward passes.
//!
//! The loss here is a pure function of (parameters, batch): batch norm uses
//! batch statistics without updating running stats, and dropout is identity,
//! so central differences are well defined.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layer::ForwardOpts;
use crate::model::{bce_loss_and_grad, Model};
use crate::seeds::rng_for;
use crate::tensor::Tensor;

/// One sampled parameter with its analytic and numeric derivatives.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub layer: usize,
    pub tensor: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Per-parameter relative errors of analytic vs central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn all_within(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn frozen_loss(model: &mut Model, batch: &Tensor, labels: &[u8]) -> Result<f64> {
    let trace = model.forward_trace(batch, ForwardOpts::FROZEN_TRAIN, None)?;
    let (loss, _) = bce_loss_and_grad(&trace.logits, labels)?;
    Ok(loss)
}

/// Compares analytic gradients against central finite differences at
/// `n_samples` randomly chosen parameters. Relative error is
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check(
    model: &Model,
    batch: &Tensor,
    labels: &[u8],
    n_samples: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    if batch.shape()[0] < 2 {
        return Err(Error::InvalidArgument(
            "grad_check needs a batch of at least 2 (batch norm constraint)".into(),
        ));
    }

    let mut work = model.clone();
    let trace = work.forward_trace(batch, ForwardOpts::FROZEN_TRAIN, None)?;
    let (_, upstream) = bce_loss_and_grad(&trace.logits, labels)?;
    let (_, analytic) = work.backward(&trace, &upstream, true)?;

    // Flat index space over every trainable parameter element.
    let mut slots: Vec<(usize, usize, usize)> = Vec::new();
    for (li, layer) in work.layers.iter().enumerate() {
        for (ti, t) in layer.params().iter().enumerate() {
            slots.push((li, ti, t.len()));
        }
    }
    let total: usize = slots.iter().map(|s| s.2).sum();
    let mut rng = rng_for(seed, "grad-check");
    let mut picks: Vec<usize> = (0..n_samples.min(total))
        .map(|_| rng.gen_range(0..total))
        .collect();
    picks.sort_unstable();
    picks.dedup();

    let mut entries = Vec::with_capacity(picks.len());
    let mut max_rel = 0.0f64;
    for flat in picks {
        let mut remaining = flat;
        let &(li, ti, _) = slots
            .iter()
            .find(|&&(_, _, len)| {
                if remaining < len {
                    true
                } else {
                    remaining -= len;
                    false
                }
            })
            .expect("flat index in range");
        let ei = remaining;

        let original = work.layers[li].params()[ti].data()[ei];
        work.layers[li].params_mut()[ti].data_mut()[ei] = original + step;
        let loss_plus = frozen_loss(&mut work, batch, labels)?;
        work.layers[li].params_mut()[ti].data_mut()[ei] = original - step;
        let loss_minus = frozen_loss(&mut work, batch, labels)?;
        work.layers[li].params_mut()[ti].data_mut()[ei] = original;

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let analytic_value = analytic[li][ti].data()[ei];
        let rel_error =
            (analytic_value - numeric).abs() / (analytic_value.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel_error);
        entries.push(GradCheckEntry {
            layer: li,
            tensor: ti,
            element: ei,
            analytic: analytic_value,
            numeric,
            rel_error,
        });
    }
    Ok(GradCheckReport {
        entries,
        max_rel_error: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::Layer;
    use crate::model::{build_cnn_a, build_cnn_b, Architecture, Model, ModelConfig};

    fn random_batch(n: usize, seed: u64) -> (Tensor, Vec<u8>) {
        let mut rng = rng_for(seed, "grad-check-batch");
        let mut batch = Tensor::zeros(&[n, 1, 17, 87]);
        for v in batch.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        (batch, labels)
    }

    #[test]
    fn linear_model_is_nearly_exact() {
        let mut cfg = ModelConfig::new(Architecture::CnnA);
        cfg.input_shape = (3, 5);
        let mut rng = rng_for(1, "linear-test");
        let weights = Tensor::from_vec(&[15, 1], (0..15).map(|_| rng.gen_range(-0.4..0.4)).collect()).unwrap();
        let model = Model {
            config: cfg,
            trained: false,
            layers: vec![
                Layer::Flatten,
                Layer::Dense { weights, bias: Tensor::zeros(&[1]) },
            ],
        };
        let mut batch = Tensor::zeros(&[4, 1, 3, 5]);
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 23) as f64) / 23.0;
        }
        let report = grad_check(&model, &batch, &[0, 1, 1, 0], 16, 1e-5, 3).unwrap();
        assert!(report.max_rel_error <= 1e-9, "max {}", report.max_rel_error);
    }

    #[test]
    fn cnn_a_backward_matches_central_differences() {
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(5);
        let model = build_cnn_a(&cfg).unwrap();
        let (batch, labels) = random_batch(4, 11);
        let report = grad_check(&model, &batch, &labels, 200, 1e-5, 17).unwrap();
        assert!(report.all_within(1e-4), "max {}", report.max_rel_error);
    }

    #[test]
    fn cnn_b_backward_matches_central_differences() {
        let cfg = ModelConfig::new(Architecture::CnnB).with_seed(6);
        let model = build_cnn_b(&cfg).unwrap();
        let (batch, labels) = random_batch(2, 13);
        let report = grad_check(&model, &batch, &labels, 200, 1e-5, 19).unwrap();
        assert!(report.all_within(1e-4), "max {}", report.max_rel_error);
    }

    #[test]
    fn small_batch_rejected() {
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(5);
        let model = build_cnn_a(&cfg).unwrap();
        let (batch, _) = random_batch(1, 11);
        assert!(grad_check(&model, &batch, &[1], 10, 1e-5, 3).is_err());
    }
}
