//! 2D average pooling. Incomplete right/bottom windows are truncated, so
//! output extents are floor(H/ph) x floor(W/pw).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::SAMPLE_CHUNK;

/// Output extent after pooling with right-edge truncation.
pub fn pooled_extent(extent: usize, pool: usize) -> usize {
    extent / pool
}

fn check_pool(h: usize, w: usize, ph: usize, pw: usize) -> Result<()> {
    if ph == 0 || pw == 0 {
        return Err(Error::InvalidArgument(
            "pool extents must be positive".into(),
        ));
    }
    if ph > h || pw > w {
        return Err(Error::InvalidArgument(format!(
            "pool ({ph},{pw}) exceeds input extent ({h},{w})"
        )));
    }
    Ok(())
}

/// Batched average pooling over `[N, C, H, W]`.
pub fn avg_pool2d_forward_batch(input: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let is = input.shape();
    let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
    check_pool(h, w, ph, pw)?;
    let (oh_dim, ow_dim) = (h / ph, w / pw);
    let mut out = Tensor::zeros(&[n, c, oh_dim, ow_dim]);
    let in_stride = c * h * w;
    let out_stride = c * oh_dim * ow_dim;
    let inv = 1.0 / (ph * pw) as f64;
    out.data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * out_stride)
        .zip(input.data().par_chunks(SAMPLE_CHUNK * in_stride))
        .for_each(|(out_chunk, in_chunk)| {
            for (o, x) in out_chunk
                .chunks_mut(out_stride)
                .zip(in_chunk.chunks(in_stride))
            {
                for ci in 0..c {
                    for oh in 0..oh_dim {
                        for ow in 0..ow_dim {
                            let mut acc = 0.0;
                            for i in 0..ph {
                                let row = (ci * h + oh * ph + i) * w + ow * pw;
                                for v in &x[row..row + pw] {
                                    acc += v;
                                }
                            }
                            o[(ci * oh_dim + oh) * ow_dim + ow] = acc * inv;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Average pooling of a single `[C, H, W]` input.
pub fn avg_pool2d(input: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let is = input.shape().to_vec();
    if is.len() != 3 {
        return Err(Error::shape("avg_pool2d input", &[0, 0, 0], &is));
    }
    let batched = input.clone().reshaped(&[1, is[0], is[1], is[2]])?;
    let out = avg_pool2d_forward_batch(&batched, ph, pw)?;
    let os = out.shape().to_vec();
    out.reshaped(&[os[1], os[2], os[3]])
}

/// Input gradient of the batched average pooling: upstream spread uniformly
/// over each window; truncated cells receive zero.
pub fn avg_pool2d_backward(
    input_shape: &[usize],
    ph: usize,
    pw: usize,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (n, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (oh_dim, ow_dim) = (h / ph, w / pw);
    let expected = [n, c, oh_dim, ow_dim];
    if upstream.shape() != expected {
        return Err(Error::shape(
            "avg_pool2d upstream",
            &expected,
            upstream.shape(),
        ));
    }
    let mut d_input = Tensor::zeros(input_shape);
    let in_stride = c * h * w;
    let out_stride = c * oh_dim * ow_dim;
    let inv = 1.0 / (ph * pw) as f64;
    d_input
        .data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * in_stride)
        .zip(upstream.data().par_chunks(SAMPLE_CHUNK * out_stride))
        .for_each(|(dx_chunk, up_chunk)| {
            for (dx, up) in dx_chunk
                .chunks_mut(in_stride)
                .zip(up_chunk.chunks(out_stride))
            {
                for ci in 0..c {
                    for oh in 0..oh_dim {
                        for ow in 0..ow_dim {
                            let g = up[(ci * oh_dim + oh) * ow_dim + ow] * inv;
                            for i in 0..ph {
                                let row = (ci * h + oh * ph + i) * w + ow * pw;
                                for v in &mut dx[row..row + pw] {
                                    *v += g;
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(d_input)
}
