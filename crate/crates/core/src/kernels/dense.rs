//! Fully connected affine layer: y = x W + b.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::SAMPLE_CHUNK;

/// Gradients of the dense layer.
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check_dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let is = input.shape();
    let ws = weights.shape();
    if is.len() != 2 || ws.len() != 2 {
        return Err(Error::shape(
            "dense operands",
            &[0, 0],
            if is.len() != 2 { is } else { ws },
        ));
    }
    if is[1] != ws[0] {
        return Err(Error::shape("dense input width", &[ws[0]], &[is[1]]));
    }
    if bias.shape() != [ws[1]] {
        return Err(Error::shape("dense bias", &[ws[1]], bias.shape()));
    }
    Ok((is[0], ws[0], ws[1]))
}

/// Affine map of a `[N, Din]` batch through weights `[Din, Dout]` and bias.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, din, dout) = check_dense(input, weights, bias)?;
    let mut out = Tensor::zeros(&[n, dout]);
    out.data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * dout)
        .zip(input.data().par_chunks(SAMPLE_CHUNK * din))
        .for_each(|(out_chunk, in_chunk)| {
            for (o, x) in out_chunk.chunks_mut(dout).zip(in_chunk.chunks(din)) {
                o.copy_from_slice(bias.data());
                for (i, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wrow = &weights.data()[i * dout..(i + 1) * dout];
                    for (ov, wv) in o.iter_mut().zip(wrow.iter()) {
                        *ov += xv * wv;
                    }
                }
            }
        });
    Ok(out)
}

/// Gradients of `dense` given the upstream gradient `[N, Dout]`.
pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let is = input.shape();
    let ws = weights.shape();
    let (n, din, dout) = (is[0], ws[0], ws[1]);
    if upstream.shape() != [n, dout] {
        return Err(Error::shape("dense upstream", &[n, dout], upstream.shape()));
    }
    let mut d_input = Tensor::zeros(&[n, din]);
    d_input
        .data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * din)
        .zip(upstream.data().par_chunks(SAMPLE_CHUNK * dout))
        .for_each(|(dx_chunk, up_chunk)| {
            for (dx, up) in dx_chunk.chunks_mut(din).zip(up_chunk.chunks(dout)) {
                for (i, dxv) in dx.iter_mut().enumerate() {
                    let wrow = &weights.data()[i * dout..(i + 1) * dout];
                    let mut acc = 0.0;
                    for (uv, wv) in up.iter().zip(wrow.iter()) {
                        acc += uv * wv;
                    }
                    *dxv = acc;
                }
            }
        });

    let n_chunks = n.div_ceil(SAMPLE_CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * SAMPLE_CHUNK;
            let hi = ((chunk + 1) * SAMPLE_CHUNK).min(n);
            let mut dw = vec![0.0; din * dout];
            let mut db = vec![0.0; dout];
            for s in lo..hi {
                let x = &input.data()[s * din..(s + 1) * din];
                let up = &upstream.data()[s * dout..(s + 1) * dout];
                for (uv, dbv) in up.iter().zip(db.iter_mut()) {
                    *dbv += uv;
                }
                for (i, &xv) in x.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let dwr = &mut dw[i * dout..(i + 1) * dout];
                    for (dwv, uv) in dwr.iter_mut().zip(up.iter()) {
                        *dwv += xv * uv;
                    }
                }
            }
            (dw, db)
        })
        .collect();

    let mut d_weights = Tensor::zeros(&[din, dout]);
    let mut d_bias = Tensor::zeros(&[dout]);
    for (dw, db) in partials {
        for (a, b) in d_weights.data_mut().iter_mut().zip(dw.iter()) {
            *a += b;
        }
        for (a, b) in d_bias.data_mut().iter_mut().zip(db.iter()) {
            *a += b;
        }
    }
    Ok(DenseGrads {
        input: d_input,
        weights: d_weights,
        bias: d_bias,
    })
}
