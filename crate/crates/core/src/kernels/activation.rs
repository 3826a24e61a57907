//! Element-wise activations and the binary cross-entropy head.

use crate::tensor::Tensor;

/// Exponential linear unit with alpha = 1: x for x > 0, exp(x) - 1 otherwise.
pub fn elu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = v.exp_m1();
        }
    }
    out
}

/// Input gradient of `elu` given the layer input and upstream gradient.
pub fn elu_backward(input: &Tensor, upstream: &Tensor) -> Tensor {
    let mut out = upstream.clone();
    for (g, &x) in out.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g *= x.exp();
        }
    }
    out
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x) = max(x, 0) + log(1 + e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Sigmoid binary cross-entropy on one logit in log-sum-exp form.
/// Returns (loss, dloss/dlogit).
pub fn sigmoid_bce(logit: f64, label: u8) -> (f64, f64) {
    debug_assert!(label <= 1);
    let y = label as f64;
    let loss = softplus(logit) - y * logit;
    let grad = sigmoid(logit) - y;
    (loss, grad)
}
