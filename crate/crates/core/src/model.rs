//! Model construction and inference: the EEGNet-style CNN-A, the VGG-style
//! CNN-B with configurable kernel size, and shared forward/backward
//! plumbing. The random-forest baseline lives in `forest`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{sigmoid, sigmoid_bce, Padding};
use crate::layer::{ForwardOpts, Layer, LayerCache};
use crate::seeds::rng_for;
use crate::tensor::Tensor;

/// Which classifier to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    CnnA,
    CnnB,
    Rf,
}

/// Configuration shared by all classifiers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// (channels, timesteps); fixed to (17, 87) for this pipeline.
    pub input_shape: (usize, usize),
    /// Square kernel edge for CNN-B; one of {2, 4, 6}.
    pub cnn_b_kernel: usize,
    pub dropout_rate: f64,
    pub rf_trees: usize,
    pub rf_max_depth: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> ModelConfig {
        ModelConfig {
            architecture,
            input_shape: (17, 87),
            cnn_b_kernel: 4,
            dropout_rate: 0.25,
            rf_trees: 500,
            rf_max_depth: 16,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> ModelConfig {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.cnn_b_kernel, 2 | 4 | 6) {
            return Err(Error::InvalidConfig(format!(
                "cnn_b_kernel must be one of 2, 4, 6; got {}",
                self.cnn_b_kernel
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must be in [0, 1); got {}",
                self.dropout_rate
            )));
        }
        if self.rf_trees == 0 || self.rf_max_depth == 0 {
            return Err(Error::InvalidConfig(
                "rf_trees and rf_max_depth must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// An ordered layer stack ending in a single-logit classifier head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub layers: Vec<Layer>,
    /// Set by the training harness; attribution refuses untrained models.
    #[serde(default)]
    pub trained: bool,
}

/// Activations cached by a full forward pass.
pub struct ForwardTrace {
    pub caches: Vec<LayerCache>,
    /// `[N, 1]` logits.
    pub logits: Tensor,
}

fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("init shape")
}

fn batch_norm_layer(channels: usize) -> Layer {
    Layer::BatchNorm {
        scale: Tensor::filled(&[channels], 1.0),
        shift: Tensor::zeros(&[channels]),
        running_mean: Tensor::zeros(&[channels]),
        running_var: Tensor::filled(&[channels], 1.0),
        epsilon: 1e-5,
        momentum: 0.99,
    }
}

/// Builds the compact rectangle-kernel classifier: a temporal convolution,
/// a depthwise convolution spanning the full AU axis, and a separable
/// convolution, each batch-normalized, then a 128-unit embedding layer and a
/// single-logit head.
pub fn build_cnn_a(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    if cfg.architecture != Architecture::CnnA {
        return Err(Error::InvalidConfig(
            "build_cnn_a requires the CnnA architecture".into(),
        ));
    }
    let (aus, _steps) = cfg.input_shape;
    let mut rng = rng_for(cfg.seed, "init:cnn-a");

    // Temporal kernel length ~ half the 58 FPS sampling rate (~500 ms).
    let temporal_k = 29;
    let f1 = 8;
    let depth_mult = 2;
    let f2 = f1 * depth_mult;
    let sep_k = 16;

    let mut layers = vec![
        Layer::Conv2d {
            kernels: he_uniform(&[f1, 1, 1, temporal_k], temporal_k, &mut rng),
            bias: Tensor::zeros(&[f1]),
            padding: Padding::Same,
        },
        batch_norm_layer(f1),
        Layer::Depthwise {
            kernels: he_uniform(&[f1, depth_mult, aus, 1], aus, &mut rng),
            multiplier: depth_mult,
            padding: Padding::Valid,
        },
        batch_norm_layer(f2),
        Layer::Elu,
        Layer::AvgPool { ph: 1, pw: 4 },
        Layer::Dropout {
            rate: cfg.dropout_rate,
        },
        Layer::Separable {
            depth_kernels: he_uniform(&[f2, 1, 1, sep_k], sep_k, &mut rng),
            point_kernels: he_uniform(&[f2, f2, 1, 1], f2, &mut rng),
            padding: Padding::Same,
        },
        batch_norm_layer(f2),
        Layer::Elu,
        Layer::AvgPool { ph: 1, pw: 8 },
        Layer::Dropout {
            rate: cfg.dropout_rate,
        },
        Layer::Flatten,
    ];
    let flat = validated_flat_width(&layers, cfg)?;
    layers.push(Layer::Dense {
        weights: he_uniform(&[flat, 128], flat, &mut rng),
        bias: Tensor::zeros(&[128]),
    });
    layers.push(Layer::Elu);
    layers.push(Layer::Dense {
        weights: he_uniform(&[128, 1], 128, &mut rng),
        bias: Tensor::zeros(&[1]),
    });

    let model = Model {
        config: cfg.clone(),
        layers,
        trained: false,
    };
    model.validate_shapes()?;
    Ok(model)
}

/// Builds the VGG-style comparison classifier: four square-kernel
/// convolution blocks with filters 16/32/64/128, each batch-normalized and
/// average-pooled (2,2), then dense layers of 256, 128 and 64 units.
pub fn build_cnn_b(cfg: &ModelConfig) -> Result<Model> {
    cfg.validate()?;
    if cfg.architecture != Architecture::CnnB {
        return Err(Error::InvalidConfig(
            "build_cnn_b requires the CnnB architecture".into(),
        ));
    }
    let k = cfg.cnn_b_kernel;
    let mut rng = rng_for(cfg.seed, "init:cnn-b");

    let mut layers = Vec::new();
    let mut cin = 1;
    for filters in [16, 32, 64, 128] {
        layers.push(Layer::Conv2d {
            kernels: he_uniform(&[filters, cin, k, k], cin * k * k, &mut rng),
            bias: Tensor::zeros(&[filters]),
            padding: Padding::Same,
        });
        layers.push(batch_norm_layer(filters));
        layers.push(Layer::Elu);
        layers.push(Layer::AvgPool { ph: 2, pw: 2 });
        cin = filters;
    }
    layers.push(Layer::Flatten);
    let mut width = validated_flat_width(&layers, cfg)?;
    for units in [256, 128, 64] {
        layers.push(Layer::Dense {
            weights: he_uniform(&[width, units], width, &mut rng),
            bias: Tensor::zeros(&[units]),
        });
        layers.push(Layer::Elu);
        width = units;
    }
    layers.push(Layer::Dense {
        weights: he_uniform(&[width, 1], width, &mut rng),
        bias: Tensor::zeros(&[1]),
    });

    let model = Model {
        config: cfg.clone(),
        layers,
        trained: false,
    };
    model.validate_shapes()?;
    Ok(model)
}

/// Walks the shape chain of a partial stack ending in Flatten and returns
/// the flattened width; fails with a dimension trace on any inconsistency.
fn validated_flat_width(layers: &[Layer], cfg: &ModelConfig) -> Result<usize> {
    let mut shape = vec![1, 1, cfg.input_shape.0, cfg.input_shape.1];
    for layer in layers {
        shape = layer.output_shape(&shape).map_err(|e| {
            Error::InvalidConfig(format!("layer {} rejected its input: {e}", layer.name()))
        })?;
    }
    Ok(shape[1])
}

pub fn build_model(cfg: &ModelConfig) -> Result<Model> {
    match cfg.architecture {
        Architecture::CnnA => build_cnn_a(cfg),
        Architecture::CnnB => build_cnn_b(cfg),
        Architecture::Rf => Err(Error::InvalidConfig(
            "random forest is built through forest::Forest, not a layer model".into(),
        )),
    }
}

impl Model {
    /// Checks every adjacent layer pair against a probe batch shape; build
    /// fails here rather than at forward time.
    pub fn validate_shapes(&self) -> Result<()> {
        let mut shape = vec![2, 1, self.config.input_shape.0, self.config.input_shape.1];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|e| {
                Error::InvalidConfig(format!(
                    "layer {i} ({}) rejected its input: {e}",
                    layer.name()
                ))
            })?;
        }
        if shape != [2, 1] {
            return Err(Error::InvalidConfig(format!(
                "model head must emit a single logit, ends with shape {shape:?}"
            )));
        }
        Ok(())
    }

    /// Full forward pass with caches. The batch must be `[N, 1, H, W]`.
    pub fn forward_trace(
        &mut self,
        batch: &Tensor,
        opts: ForwardOpts,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardTrace> {
        self.check_batch_shape(batch)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &mut self.layers {
            let (out, cache) = layer.forward(&current, opts, dropout_rng.as_deref_mut())?;
            caches.push(cache);
            current = out;
        }
        Ok(ForwardTrace {
            caches,
            logits: current,
        })
    }

    /// Backward pass from an upstream gradient on the logits (`[N, 1]`).
    /// Returns the input gradient and per-layer parameter gradients.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &Tensor,
        bn_batch_stats: bool,
    ) -> Result<(Tensor, Vec<Vec<Tensor>>)> {
        if upstream.shape() != trace.logits.shape() {
            return Err(Error::shape(
                "model upstream",
                trace.logits.shape(),
                upstream.shape(),
            ));
        }
        let mut grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut current = upstream.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (d_input, d_params) = layer.backward(&trace.caches[i], &current, bn_batch_stats)?;
            grads[i] = d_params;
            current = d_input;
        }
        Ok((current, grads))
    }

    /// Infer-mode logits for a `[N, 17, 87]` (or `[N, 1, 17, 87]`) batch.
    /// Chunked so large evaluation sets do not hold per-layer caches.
    pub fn predict_logits(&self, batch: &Tensor) -> Result<Vec<f64>> {
        let batch = self.as_model_batch(batch)?;
        let (n, rest) = (batch.shape()[0], batch.shape()[1..].to_vec());
        let stride: usize = rest.iter().product();
        let mut logits = Vec::with_capacity(n);
        let mut model = self.clone();
        for chunk_lo in (0..n).step_by(256) {
            let chunk_hi = (chunk_lo + 256).min(n);
            let m = chunk_hi - chunk_lo;
            let sub = Tensor::from_vec(
                &[m, rest[0], rest[1], rest[2]],
                batch.data()[chunk_lo * stride..chunk_hi * stride].to_vec(),
            )?;
            let trace = model.forward_trace(&sub, ForwardOpts::INFER, None)?;
            logits.extend_from_slice(trace.logits.data());
        }
        Ok(logits)
    }

    /// Probability of the "stuttered" class per trial.
    pub fn predict_proba(&self, batch: &Tensor) -> Result<Vec<f64>> {
        Ok(self
            .predict_logits(batch)?
            .into_iter()
            .map(sigmoid)
            .collect())
    }

    fn check_batch_shape(&self, batch: &Tensor) -> Result<()> {
        let (h, w) = self.config.input_shape;
        let s = batch.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != h || s[3] != w {
            return Err(Error::shape("model batch", &[0, 1, h, w], s));
        }
        Ok(())
    }

    /// Accepts `[N, 17, 87]` or `[N, 1, 17, 87]` and yields the 4-d form.
    fn as_model_batch(&self, batch: &Tensor) -> Result<Tensor> {
        let (h, w) = self.config.input_shape;
        let s = batch.shape().to_vec();
        match s.len() {
            3 if s[1] == h && s[2] == w => batch.clone().reshaped(&[s[0], 1, h, w]),
            4 if s[1] == 1 && s[2] == h && s[3] == w => Ok(batch.clone()),
            _ => Err(Error::shape("prediction batch", &[0, h, w], &s)),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(Tensor::len)
            .sum()
    }

    /// Applies one SGD step: p -= lr * g for every parameter tensor.
    pub fn sgd_step(&mut self, grads: &[Vec<Tensor>], lr: f64) -> Result<()> {
        for (layer, layer_grads) in self.layers.iter_mut().zip(grads.iter()) {
            for (param, grad) in layer.params_mut().into_iter().zip(layer_grads.iter()) {
                param.axpy(-lr, grad)?;
            }
        }
        Ok(())
    }
}

/// Stacks per-trial `[H, W]` matrices into a `[N, 1, H, W]` model batch.
pub fn stack_batch(matrices: &[&Tensor], input_shape: (usize, usize)) -> Result<Tensor> {
    let (h, w) = input_shape;
    let n = matrices.len();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot stack an empty batch".into()));
    }
    let mut data = Vec::with_capacity(n * h * w);
    for m in matrices {
        if m.shape() != [h, w] {
            return Err(Error::shape("stack_batch trial", &[h, w], m.shape()));
        }
        data.extend_from_slice(m.data());
    }
    Tensor::from_vec(&[n, 1, h, w], data)
}

/// Mean binary cross-entropy over a logit batch plus the upstream gradient
/// (d loss / d logit, already divided by N).
pub fn bce_loss_and_grad(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let n = labels.len();
    if logits.shape() != [n, 1] {
        return Err(Error::shape("bce logits", &[n, 1], logits.shape()));
    }
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut upstream = Tensor::zeros(&[n, 1]);
    for i in 0..n {
        let (loss, grad) = sigmoid_bce(logits.data()[i], labels[i]);
        total += loss;
        upstream.data_mut()[i] = grad * inv_n;
    }
    Ok((total * inv_n, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_batch(n: usize) -> Tensor {
        Tensor::zeros(&[n, 1, 17, 87])
    }

    #[test]
    fn cnn_a_accepts_17x87_and_is_finite_on_zero_input() {
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(11);
        let model = build_cnn_a(&cfg).unwrap();
        let probs = model.predict_proba(&zero_batch(2)).unwrap();
        for p in probs {
            assert!(p.is_finite() && p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn cnn_a_parameter_count_pinned() {
        // conv 8x1x1x29+8, bn 16, depthwise 8*2*17, bn 32, separable 256+256,
        // bn 32, dense 32*128+128, dense 128+1.
        let cfg = ModelConfig::new(Architecture::CnnA);
        let model = build_cnn_a(&cfg).unwrap();
        assert_eq!(model.param_count(), 5457);
    }

    #[test]
    fn cnn_b_parameter_count_pinned() {
        let cfg = ModelConfig::new(Architecture::CnnB);
        let model = build_cnn_b(&cfg).unwrap();
        assert_eq!(model.param_count(), 378_321);
    }

    #[test]
    fn cnn_b_kernel_variants_build() {
        for k in [2, 4, 6] {
            let mut cfg = ModelConfig::new(Architecture::CnnB).with_seed(5);
            cfg.cnn_b_kernel = k;
            let model = build_cnn_b(&cfg).unwrap();
            assert!(model.predict_proba(&zero_batch(1)).is_ok(), "kernel {k}");
        }
        let mut cfg = ModelConfig::new(Architecture::CnnB);
        cfg.cnn_b_kernel = 3;
        assert!(build_cnn_b(&cfg).is_err());
    }

    #[test]
    fn forward_determinism_under_fixed_seed() {
        let cfg = ModelConfig::new(Architecture::CnnB).with_seed(77);
        let a = build_cnn_b(&cfg).unwrap();
        let b = build_cnn_b(&cfg).unwrap();
        let mut batch = zero_batch(2);
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = ((i % 97) as f64) / 97.0;
        }
        let pa = a.predict_proba(&batch).unwrap();
        let pb = b.predict_proba(&batch).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn logit_zero_maps_to_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn batch_composition_invariance() {
        // Infer-mode batch norm guarantees a trial's probability does not
        // depend on what else is in the batch.
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(3);
        let model = build_cnn_a(&cfg).unwrap();
        let mut batch = zero_batch(3);
        for (i, v) in batch.data_mut().iter_mut().enumerate() {
            *v = ((i * 31 % 89) as f64) / 89.0;
        }
        let all = model.predict_proba(&batch).unwrap();
        let first = Tensor::from_vec(&[1, 1, 17, 87], batch.data()[..1479].to_vec()).unwrap();
        let alone = model.predict_proba(&first).unwrap();
        assert_eq!(all[0], alone[0]);
    }

    #[test]
    fn identical_trials_get_identical_probabilities() {
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(9);
        let model = build_cnn_a(&cfg).unwrap();
        let mut one = Tensor::zeros(&[1, 1, 17, 87]);
        for (i, v) in one.data_mut().iter_mut().enumerate() {
            *v = ((i % 13) as f64) / 13.0;
        }
        let mut two = Tensor::zeros(&[2, 1, 17, 87]);
        two.data_mut()[..1479].copy_from_slice(one.data());
        two.data_mut()[1479..].copy_from_slice(one.data());
        let probs = model.predict_proba(&two).unwrap();
        assert_eq!(probs[0], probs[1]);
    }

    #[test]
    fn no_au_row_is_structurally_dead() {
        let cfg = ModelConfig::new(Architecture::CnnA).with_seed(21);
        let model = build_cnn_a(&cfg).unwrap();
        let zero = model.predict_logits(&zero_batch(1)).unwrap()[0];
        for row in 0..17 {
            let mut batch = zero_batch(1);
            for t in 0..87 {
                batch.data_mut()[row * 87 + t] = 0.9;
            }
            let logit = model.predict_logits(&batch).unwrap()[0];
            assert!((logit - zero).abs() > 1e-12, "AU row {row} is dead");
        }
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let cfg = ModelConfig::new(Architecture::CnnA);
        let model = build_cnn_a(&cfg).unwrap();
        let bad = Tensor::zeros(&[1, 16, 87]);
        assert!(model.predict_proba(&bad).is_err());
    }

    #[test]
    fn corrupted_config_fails_at_build_not_forward() {
        let mut cfg = ModelConfig::new(Architecture::CnnB);
        // 16 timesteps survive only three (2,2) poolings: 16->8->4->2->1 is
        // fine, but the 17-row axis collapses first on a 17x2 input.
        cfg.input_shape = (17, 2);
        let err = build_cnn_b(&cfg).unwrap_err();
        assert!(err.to_string().contains("below 1x1"), "{err}");
    }
}
