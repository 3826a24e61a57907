//! Batch normalization over the channel axis of `[N, C, H, W]` (or `[N, C]`)
//! tensors. Train mode normalizes by batch statistics and updates running
//! stats with momentum; infer mode is a frozen affine map of the running
//! stats.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gradients of train-mode batch norm.
pub struct BatchNormGrads {
    pub input: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
}

/// Cached normalized activations needed by the backward pass.
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

fn channel_geometry(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(Error::shape("batch_norm input", &[0, 0, 0, 0], shape)),
    }
}

fn check_params(
    c: usize,
    scale: &Tensor,
    shift: &Tensor,
    mean: &Tensor,
    var: &Tensor,
) -> Result<()> {
    for (name, t) in [
        ("scale", scale),
        ("shift", shift),
        ("running mean", mean),
        ("running variance", var),
    ] {
        if t.shape() != [c] {
            return Err(Error::shape(format!("batch_norm {name}"), &[c], t.shape()));
        }
    }
    if var.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "running variance must be non-negative".into(),
        ));
    }
    Ok(())
}

/// Train-mode batch norm. Normalizes each channel by its batch mean and
/// (biased) variance, applies scale/shift, and updates the running stats
/// in place: `running = momentum * running + (1 - momentum) * batch`.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_train(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    epsilon: f64,
    momentum: f64,
) -> Result<(Tensor, BatchNormCache)> {
    let (n, c, plane) = channel_geometry(input.shape())?;
    if n < 2 {
        return Err(Error::InvalidArgument(
            "batch_norm train mode needs a batch of at least 2".into(),
        ));
    }
    check_params(c, scale, shift, running_mean, running_var)?;
    let m = (n * plane) as f64;
    let stride = c * plane;

    let mut out = Tensor::zeros(input.shape());
    let mut normalized = Tensor::zeros(input.shape());
    let mut inv_std = vec![0.0; c];

    for ci in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            let base = s * stride + ci * plane;
            for v in &input.data()[base..base + plane] {
                sum += v;
            }
        }
        let mean = sum / m;
        let mut var_sum = 0.0;
        for s in 0..n {
            let base = s * stride + ci * plane;
            for v in &input.data()[base..base + plane] {
                let d = v - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum / m;
        let istd = 1.0 / (var + epsilon).sqrt();
        inv_std[ci] = istd;
        let (g, b) = (scale.data()[ci], shift.data()[ci]);
        for s in 0..n {
            let base = s * stride + ci * plane;
            for i in base..base + plane {
                let xhat = (input.data()[i] - mean) * istd;
                normalized.data_mut()[i] = xhat;
                out.data_mut()[i] = g * xhat + b;
            }
        }
        running_mean.data_mut()[ci] = momentum * running_mean.data()[ci] + (1.0 - momentum) * mean;
        running_var.data_mut()[ci] = momentum * running_var.data()[ci] + (1.0 - momentum) * var;
    }
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Infer-mode batch norm: frozen affine transform from the running stats.
pub fn batch_norm_infer(
    input: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    running_mean: &Tensor,
    running_var: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    let (n, c, plane) = channel_geometry(input.shape())?;
    check_params(c, scale, shift, running_mean, running_var)?;
    let stride = c * plane;
    let mut out = Tensor::zeros(input.shape());
    for ci in 0..c {
        let istd = 1.0 / (running_var.data()[ci] + epsilon).sqrt();
        let g = scale.data()[ci] * istd;
        let b = shift.data()[ci] - running_mean.data()[ci] * g;
        for s in 0..n {
            let base = s * stride + ci * plane;
            for i in base..base + plane {
                out.data_mut()[i] = g * input.data()[i] + b;
            }
        }
    }
    Ok(out)
}

/// Gradients of train-mode batch norm from the cached normalized values.
pub fn batch_norm_train_backward(
    cache: &BatchNormCache,
    scale: &Tensor,
    upstream: &Tensor,
) -> Result<BatchNormGrads> {
    let (n, c, plane) = channel_geometry(upstream.shape())?;
    if upstream.shape() != cache.normalized.shape() {
        return Err(Error::shape(
            "batch_norm upstream",
            cache.normalized.shape(),
            upstream.shape(),
        ));
    }
    let m = (n * plane) as f64;
    let stride = c * plane;
    let mut d_input = Tensor::zeros(upstream.shape());
    let mut d_scale = Tensor::zeros(&[c]);
    let mut d_shift = Tensor::zeros(&[c]);
    for ci in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for s in 0..n {
            let base = s * stride + ci * plane;
            for i in base..base + plane {
                let dy = upstream.data()[i];
                sum_dy += dy;
                sum_dy_xhat += dy * cache.normalized.data()[i];
            }
        }
        d_scale.data_mut()[ci] = sum_dy_xhat;
        d_shift.data_mut()[ci] = sum_dy;
        let g_istd = scale.data()[ci] * cache.inv_std[ci];
        let mean_dy = sum_dy / m;
        let mean_dy_xhat = sum_dy_xhat / m;
        for s in 0..n {
            let base = s * stride + ci * plane;
            for i in base..base + plane {
                let dy = upstream.data()[i];
                let xhat = cache.normalized.data()[i];
                d_input.data_mut()[i] = g_istd * (dy - mean_dy - xhat * mean_dy_xhat);
            }
        }
    }
    Ok(BatchNormGrads {
        input: d_input,
        scale: d_scale,
        shift: d_shift,
    })
}

/// Input gradient through infer-mode batch norm (a frozen affine map).
pub fn batch_norm_infer_backward(
    upstream: &Tensor,
    scale: &Tensor,
    running_var: &Tensor,
    epsilon: f64,
) -> Result<Tensor> {
    let (n, c, plane) = channel_geometry(upstream.shape())?;
    let stride = c * plane;
    let mut d_input = Tensor::zeros(upstream.shape());
    for ci in 0..c {
        let g = scale.data()[ci] / (running_var.data()[ci] + epsilon).sqrt();
        for s in 0..n {
            let base = s * stride + ci * plane;
            for i in base..base + plane {
                d_input.data_mut()[i] = g * upstream.data()[i];
            }
        }
    }
    Ok(d_input)
}
