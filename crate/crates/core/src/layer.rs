//! Layer graph machinery: a closed set of layer kinds with shape-checked
//! forward passes, cached state, and exact analytic backward passes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::norm::{batch_norm_train_backward, BatchNormCache};
use crate::kernels::{
    avg_pool2d_backward, avg_pool2d_forward_batch, batch_norm_infer, batch_norm_infer_backward,
    batch_norm_train, conv2d_backward, conv2d_forward_batch, dense, dense_backward,
    depthwise_conv2d_backward, depthwise_conv2d_forward_batch, elu, elu_backward, pooled_extent,
    Padding,
};
use crate::tensor::Tensor;

/// One layer of a model. Parameterized layers own their tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Layer {
    Conv2d {
        kernels: Tensor,
        bias: Tensor,
        padding: Padding,
    },
    Depthwise {
        kernels: Tensor,
        multiplier: usize,
        padding: Padding,
    },
    Separable {
        depth_kernels: Tensor,
        point_kernels: Tensor,
        padding: Padding,
    },
    BatchNorm {
        scale: Tensor,
        shift: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
        epsilon: f64,
        momentum: f64,
    },
    Elu,
    AvgPool {
        ph: usize,
        pw: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    Dense {
        weights: Tensor,
        bias: Tensor,
    },
}

/// Per-layer state cached by a forward pass for the matching backward pass.
pub struct LayerCache {
    pub input: Tensor,
    bn: Option<BatchNormCache>,
    dropout_mask: Option<Vec<f64>>,
    separable_mid: Option<Tensor>,
}

impl LayerCache {
    fn plain(input: Tensor) -> LayerCache {
        LayerCache {
            input,
            bn: None,
            dropout_mask: None,
            separable_mid: None,
        }
    }
}

/// How a forward pass should treat stochastic and batch-dependent layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOpts {
    /// Batch norm normalizes by batch statistics instead of running stats.
    pub bn_batch_stats: bool,
    /// Update running statistics (training only).
    pub update_running: bool,
}

impl ForwardOpts {
    pub const TRAIN: ForwardOpts = ForwardOpts {
        bn_batch_stats: true,
        update_running: true,
    };
    /// Pure function of (params, input): batch stats, no side effects, no
    /// dropout sampling. Used by gradient checking.
    pub const FROZEN_TRAIN: ForwardOpts = ForwardOpts {
        bn_batch_stats: true,
        update_running: false,
    };
    pub const INFER: ForwardOpts = ForwardOpts {
        bn_batch_stats: false,
        update_running: false,
    };
}

impl Layer {
    /// Output shape for a `[N, ...]` input shape; errors carry the dimension
    /// trace when a layer cannot accept its input.
    pub fn output_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d {
                kernels, padding, ..
            } => {
                let ks = kernels.shape();
                if in_shape.len() != 4 || in_shape[1] != ks[1] {
                    return Err(Error::shape("conv2d input", ks, in_shape));
                }
                let (_, _, oh, ow) = padding.geometry(in_shape[2], in_shape[3], ks[2], ks[3]);
                Ok(vec![in_shape[0], ks[0], oh, ow])
            }
            Layer::Depthwise {
                kernels,
                multiplier,
                padding,
            } => {
                let ks = kernels.shape();
                if in_shape.len() != 4 || in_shape[1] != ks[0] {
                    return Err(Error::shape("depthwise input", ks, in_shape));
                }
                if *padding == Padding::Valid && (ks[2] > in_shape[2] || ks[3] > in_shape[3]) {
                    return Err(Error::shape(
                        "depthwise valid kernel extent",
                        &[in_shape[2], in_shape[3]],
                        &[ks[2], ks[3]],
                    ));
                }
                let (_, _, oh, ow) = padding.geometry(in_shape[2], in_shape[3], ks[2], ks[3]);
                Ok(vec![in_shape[0], ks[0] * multiplier, oh, ow])
            }
            Layer::Separable {
                depth_kernels,
                point_kernels,
                padding,
            } => {
                let ds = depth_kernels.shape();
                if in_shape.len() != 4 || in_shape[1] != ds[0] {
                    return Err(Error::shape("separable input", ds, in_shape));
                }
                let (_, _, oh, ow) = padding.geometry(in_shape[2], in_shape[3], ds[2], ds[3]);
                Ok(vec![in_shape[0], point_kernels.shape()[0], oh, ow])
            }
            Layer::BatchNorm { scale, .. } => {
                let c = scale.shape()[0];
                if in_shape.len() < 2 || in_shape[1] != c {
                    return Err(Error::shape("batch_norm input", &[0, c], in_shape));
                }
                Ok(in_shape.to_vec())
            }
            Layer::Elu | Layer::Dropout { .. } => Ok(in_shape.to_vec()),
            Layer::AvgPool { ph, pw } => {
                if in_shape.len() != 4 {
                    return Err(Error::shape("avg_pool input", &[0, 0, 0, 0], in_shape));
                }
                let oh = pooled_extent(in_shape[2], *ph);
                let ow = pooled_extent(in_shape[3], *pw);
                if oh == 0 || ow == 0 {
                    return Err(Error::InvalidConfig(format!(
                        "avg_pool ({ph},{pw}) would reduce {}x{} below 1x1",
                        in_shape[2], in_shape[3]
                    )));
                }
                Ok(vec![in_shape[0], in_shape[1], oh, ow])
            }
            Layer::Flatten => {
                let volume: usize = in_shape[1..].iter().product();
                Ok(vec![in_shape[0], volume])
            }
            Layer::Dense { weights, .. } => {
                let ws = weights.shape();
                if in_shape.len() != 2 || in_shape[1] != ws[0] {
                    return Err(Error::shape("dense input", ws, in_shape));
                }
                Ok(vec![in_shape[0], ws[1]])
            }
        }
    }

    /// Forward pass. `rng` drives dropout sampling; dropout is identity when
    /// it is absent.
    pub fn forward(
        &mut self,
        input: &Tensor,
        opts: ForwardOpts,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, LayerCache)> {
        match self {
            Layer::Conv2d {
                kernels,
                bias,
                padding,
            } => {
                let out = conv2d_forward_batch(input, kernels, bias, *padding)?;
                Ok((out, LayerCache::plain(input.clone())))
            }
            Layer::Depthwise {
                kernels,
                multiplier,
                padding,
            } => {
                let out = depthwise_conv2d_forward_batch(input, kernels, *multiplier, *padding)?;
                Ok((out, LayerCache::plain(input.clone())))
            }
            Layer::Separable {
                depth_kernels,
                point_kernels,
                padding,
            } => {
                let mid = depthwise_conv2d_forward_batch(input, depth_kernels, 1, *padding)?;
                let zero_bias = Tensor::zeros(&[point_kernels.shape()[0]]);
                let out = conv2d_forward_batch(&mid, point_kernels, &zero_bias, Padding::Valid)?;
                let mut cache = LayerCache::plain(input.clone());
                cache.separable_mid = Some(mid);
                Ok((out, cache))
            }
            Layer::BatchNorm {
                scale,
                shift,
                running_mean,
                running_var,
                epsilon,
                momentum,
            } => {
                if opts.bn_batch_stats {
                    let (out, bn_cache) = if opts.update_running {
                        batch_norm_train(
                            input,
                            scale,
                            shift,
                            running_mean,
                            running_var,
                            *epsilon,
                            *momentum,
                        )?
                    } else {
                        // Batch statistics without mutating the layer.
                        let mut rm = running_mean.clone();
                        let mut rv = running_var.clone();
                        batch_norm_train(
                            input, scale, shift, &mut rm, &mut rv, *epsilon, *momentum,
                        )?
                    };
                    let mut cache = LayerCache::plain(input.clone());
                    cache.bn = Some(bn_cache);
                    Ok((out, cache))
                } else {
                    let out =
                        batch_norm_infer(input, scale, shift, running_mean, running_var, *epsilon)?;
                    Ok((out, LayerCache::plain(input.clone())))
                }
            }
            Layer::Elu => Ok((elu(input), LayerCache::plain(input.clone()))),
            Layer::AvgPool { ph, pw } => {
                let out = avg_pool2d_forward_batch(input, *ph, *pw)?;
                Ok((out, LayerCache::plain(input.clone())))
            }
            Layer::Dropout { rate } => match rng {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let inv_keep = 1.0 / keep;
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                inv_keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let mut out = input.clone();
                    for (v, m) in out.data_mut().iter_mut().zip(mask.iter()) {
                        *v *= m;
                    }
                    let mut cache = LayerCache::plain(input.clone());
                    cache.dropout_mask = Some(mask);
                    Ok((out, cache))
                }
                _ => Ok((input.clone(), LayerCache::plain(input.clone()))),
            },
            Layer::Flatten => {
                let volume: usize = input.shape()[1..].iter().product();
                let out = input.clone().reshaped(&[input.shape()[0], volume])?;
                Ok((out, LayerCache::plain(input.clone())))
            }
            Layer::Dense { weights, bias } => {
                let out = dense(input, weights, bias)?;
                Ok((out, LayerCache::plain(input.clone())))
            }
        }
    }

    /// Backward pass: input gradient plus parameter gradients (aligned with
    /// `params()` order). `bn_batch_stats` must match the forward options.
    pub fn backward(
        &self,
        cache: &LayerCache,
        upstream: &Tensor,
        bn_batch_stats: bool,
    ) -> Result<(Tensor, Vec<Tensor>)> {
        match self {
            Layer::Conv2d {
                kernels, padding, ..
            } => {
                let grads = conv2d_backward(&cache.input, kernels, upstream, *padding)?;
                Ok((grads.input, vec![grads.kernels, grads.bias]))
            }
            Layer::Depthwise {
                kernels,
                multiplier,
                padding,
            } => {
                let grads = depthwise_conv2d_backward(
                    &cache.input,
                    kernels,
                    *multiplier,
                    upstream,
                    *padding,
                )?;
                Ok((grads.input, vec![grads.kernels]))
            }
            Layer::Separable {
                depth_kernels,
                point_kernels,
                padding,
            } => {
                let mid = cache
                    .separable_mid
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("separable cache missing".into()))?;
                let point = conv2d_backward(mid, point_kernels, upstream, Padding::Valid)?;
                let depth = depthwise_conv2d_backward(
                    &cache.input,
                    depth_kernels,
                    1,
                    &point.input,
                    *padding,
                )?;
                Ok((depth.input, vec![depth.kernels, point.kernels]))
            }
            Layer::BatchNorm {
                scale,
                running_var,
                epsilon,
                ..
            } => {
                if bn_batch_stats {
                    let bn = cache
                        .bn
                        .as_ref()
                        .ok_or_else(|| Error::InvalidArgument("batch_norm cache missing".into()))?;
                    let grads = batch_norm_train_backward(bn, scale, upstream)?;
                    Ok((grads.input, vec![grads.scale, grads.shift]))
                } else {
                    let d_input =
                        batch_norm_infer_backward(upstream, scale, running_var, *epsilon)?;
                    // Scale/shift gradients are not needed on the frozen path.
                    Ok((
                        d_input,
                        vec![Tensor::zeros(scale.shape()), Tensor::zeros(scale.shape())],
                    ))
                }
            }
            Layer::Elu => {
                if upstream.shape() != cache.input.shape() {
                    return Err(Error::shape(
                        "elu upstream",
                        cache.input.shape(),
                        upstream.shape(),
                    ));
                }
                Ok((elu_backward(&cache.input, upstream), vec![]))
            }
            Layer::AvgPool { ph, pw } => {
                let d_input = avg_pool2d_backward(cache.input.shape(), *ph, *pw, upstream)?;
                Ok((d_input, vec![]))
            }
            Layer::Dropout { .. } => match &cache.dropout_mask {
                Some(mask) => {
                    let mut out = upstream.clone();
                    for (v, m) in out.data_mut().iter_mut().zip(mask.iter()) {
                        *v *= m;
                    }
                    Ok((out, vec![]))
                }
                None => Ok((upstream.clone(), vec![])),
            },
            Layer::Flatten => {
                let d_input = upstream.clone().reshaped(cache.input.shape())?;
                Ok((d_input, vec![]))
            }
            Layer::Dense { weights, .. } => {
                let grads = dense_backward(&cache.input, weights, upstream)?;
                Ok((grads.input, vec![grads.weights, grads.bias]))
            }
        }
    }

    /// Trainable parameter tensors, in a fixed order per layer kind.
    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            Layer::Depthwise { kernels, .. } => vec![kernels],
            Layer::Separable {
                depth_kernels,
                point_kernels,
                ..
            } => {
                vec![depth_kernels, point_kernels]
            }
            Layer::BatchNorm { scale, shift, .. } => vec![scale, shift],
            Layer::Dense { weights, bias } => vec![weights, bias],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d { kernels, bias, .. } => vec![kernels, bias],
            Layer::Depthwise { kernels, .. } => vec![kernels],
            Layer::Separable {
                depth_kernels,
                point_kernels,
                ..
            } => {
                vec![depth_kernels, point_kernels]
            }
            Layer::BatchNorm { scale, shift, .. } => vec![scale, shift],
            Layer::Dense { weights, bias } => vec![weights, bias],
            _ => vec![],
        }
    }

    /// Short layer name for dimension traces and error messages.
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d { .. } => "conv2d",
            Layer::Depthwise { .. } => "depthwise_conv2d",
            Layer::Separable { .. } => "separable_conv2d",
            Layer::BatchNorm { .. } => "batch_norm",
            Layer::Elu => "elu",
            Layer::AvgPool { .. } => "avg_pool2d",
            Layer::Dropout { .. } => "dropout",
            Layer::Flatten => "flatten",
            Layer::Dense { .. } => "dense",
        }
    }
}
