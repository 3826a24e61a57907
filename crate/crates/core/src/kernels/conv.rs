//! 2D convolution kernels: standard (cross-correlation), depthwise with a
//! channel multiplier, and depthwise-separable. Stride is fixed at 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Padding, SAMPLE_CHUNK};

/// Gradients of a standard convolution.
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Gradients of a depthwise convolution (no bias by construction).
pub struct DepthwiseGrads {
    pub input: Tensor,
    pub kernels: Tensor,
}

fn check_conv_shapes(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<()> {
    let ks = kernels.shape();
    if ks.len() != 4 {
        return Err(Error::shape("conv2d kernels", &[0, 0, 0, 0], ks));
    }
    let is = input.shape();
    let (cin, h, w) = (is[is.len() - 3], is[is.len() - 2], is[is.len() - 1]);
    if ks[1] != cin {
        return Err(Error::shape("conv2d input channels", ks, &is[is.len() - 3..]));
    }
    if bias.shape() != [ks[0]] {
        return Err(Error::shape("conv2d bias", &[ks[0]], bias.shape()));
    }
    if padding == Padding::Valid && (ks[2] > h || ks[3] > w) {
        return Err(Error::shape(
            "conv2d valid kernel extent",
            &[h, w],
            &[ks[2], ks[3]],
        ));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn conv2d_sample(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    k: &[f64],
    cout: usize,
    kh: usize,
    kw: usize,
    bias: &[f64],
    pt: usize,
    pl: usize,
    oh_dim: usize,
    ow_dim: usize,
    out: &mut [f64],
) {
    let out_plane = oh_dim * ow_dim;
    for co in 0..cout {
        out[co * out_plane..(co + 1) * out_plane].fill(bias[co]);
    }
    for co in 0..cout {
        let out_c = co * out_plane;
        for ci in 0..cin {
            let x_c = ci * h * w;
            for dkh in 0..kh {
                // ih = oh + dkh - pt must land in [0, h)
                let oh_lo = pt.saturating_sub(dkh);
                let oh_hi = (h + pt).saturating_sub(dkh).min(oh_dim);
                if oh_lo >= oh_hi {
                    continue;
                }
                for dkw in 0..kw {
                    let weight = k[((co * cin + ci) * kh + dkh) * kw + dkw];
                    if weight == 0.0 {
                        continue;
                    }
                    let ow_lo = pl.saturating_sub(dkw);
                    let ow_hi = (w + pl).saturating_sub(dkw).min(ow_dim);
                    if ow_lo >= ow_hi {
                        continue;
                    }
                    for oh in oh_lo..oh_hi {
                        let ih = oh + dkh - pt;
                        let x_row = x_c + ih * w + ow_lo + dkw - pl;
                        let o_row = out_c + oh * ow_dim + ow_lo;
                        let n = ow_hi.saturating_sub(ow_lo);
                        let xs = &x[x_row..x_row + n];
                        let os = &mut out[o_row..o_row + n];
                        for (o, xv) in os.iter_mut().zip(xs.iter()) {
                            *o += weight * xv;
                        }
                    }
                }
            }
        }
    }
}

/// Batched cross-correlation over `[N, Cin, H, W]` with kernels
/// `[Cout, Cin, kh, kw]` and per-output-channel bias.
pub fn conv2d_forward_batch(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    padding: Padding,
) -> Result<Tensor> {
    check_conv_shapes(input, kernels, bias, padding)?;
    let is = input.shape();
    let (n, cin, h, w) = (is[0], is[1], is[2], is[3]);
    let ks = kernels.shape();
    let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
    let (pt, pl, oh_dim, ow_dim) = padding.geometry(h, w, kh, kw);
    let mut out = Tensor::zeros(&[n, cout, oh_dim, ow_dim]);
    let in_stride = cin * h * w;
    let out_stride = cout * oh_dim * ow_dim;
    out.data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * out_stride)
        .zip(input.data().par_chunks(SAMPLE_CHUNK * in_stride))
        .for_each(|(out_chunk, in_chunk)| {
            for (o, x) in out_chunk
                .chunks_mut(out_stride)
                .zip(in_chunk.chunks(in_stride))
            {
                conv2d_sample(
                    x,
                    cin,
                    h,
                    w,
                    kernels.data(),
                    cout,
                    kh,
                    kw,
                    bias.data(),
                    pt,
                    pl,
                    oh_dim,
                    ow_dim,
                    o,
                );
            }
        });
    Ok(out)
}

/// Cross-correlation of a single `[Cin, H, W]` input.
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor, padding: Padding) -> Result<Tensor> {
    let is = input.shape().to_vec();
    if is.len() != 3 {
        return Err(Error::shape("conv2d input", &[0, 0, 0], &is));
    }
    let batched = input.clone().reshaped(&[1, is[0], is[1], is[2]])?;
    let out = conv2d_forward_batch(&batched, kernels, bias, padding)?;
    let os = out.shape().to_vec();
    out.reshaped(&[os[1], os[2], os[3]])
}

/// Gradients of `conv2d_forward_batch` given the upstream gradient.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    upstream: &Tensor,
    padding: Padding,
) -> Result<ConvGrads> {
    let is = input.shape();
    let (n, cin, h, w) = (is[0], is[1], is[2], is[3]);
    let ks = kernels.shape();
    let (cout, kh, kw) = (ks[0], ks[2], ks[3]);
    let (pt, pl, oh_dim, ow_dim) = padding.geometry(h, w, kh, kw);
    let expected = [n, cout, oh_dim, ow_dim];
    if upstream.shape() != expected {
        return Err(Error::shape("conv2d upstream", &expected, upstream.shape()));
    }
    let in_stride = cin * h * w;
    let out_stride = cout * oh_dim * ow_dim;
    let out_plane = oh_dim * ow_dim;

    let mut d_input = Tensor::zeros(&[n, cin, h, w]);
    // Input gradient: per-sample, embarrassingly parallel.
    d_input
        .data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * in_stride)
        .zip(upstream.data().par_chunks(SAMPLE_CHUNK * out_stride))
        .for_each(|(dx_chunk, up_chunk)| {
            for (dx, up) in dx_chunk
                .chunks_mut(in_stride)
                .zip(up_chunk.chunks(out_stride))
            {
                for co in 0..cout {
                    let up_c = co * out_plane;
                    for ci in 0..cin {
                        let x_c = ci * h * w;
                        for dkh in 0..kh {
                            let oh_lo = pt.saturating_sub(dkh);
                            let oh_hi = (h + pt).saturating_sub(dkh).min(oh_dim);
                            if oh_lo >= oh_hi {
                                continue;
                            }
                            for dkw in 0..kw {
                                let weight =
                                    kernels.data()[((co * cin + ci) * kh + dkh) * kw + dkw];
                                if weight == 0.0 {
                                    continue;
                                }
                                let ow_lo = pl.saturating_sub(dkw);
                                let ow_hi = (w + pl).saturating_sub(dkw).min(ow_dim);
                                if ow_lo >= ow_hi {
                                    continue;
                                }
                                let len = ow_hi.saturating_sub(ow_lo);
                                for oh in oh_lo..oh_hi {
                                    let ih = oh + dkh - pt;
                                    let xs = x_c + ih * w + ow_lo + dkw - pl;
                                    let us = up_c + oh * ow_dim + ow_lo;
                                    let dxs = &mut dx[xs..xs + len];
                                    let ups = &up[us..us + len];
                                    for (d, u) in dxs.iter_mut().zip(ups.iter()) {
                                        *d += weight * u;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    // Kernel/bias gradients: per-chunk partials merged in chunk order so the
    // floating-point reduction order is fixed.
    let kn = kernels.len();
    let n_chunks = n.div_ceil(SAMPLE_CHUNK);
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * SAMPLE_CHUNK;
            let hi = ((chunk + 1) * SAMPLE_CHUNK).min(n);
            let mut dk = vec![0.0; kn];
            let mut db = vec![0.0; cout];
            for s in lo..hi {
                let x = &input.data()[s * in_stride..(s + 1) * in_stride];
                let up = &upstream.data()[s * out_stride..(s + 1) * out_stride];
                for co in 0..cout {
                    let up_c = co * out_plane;
                    let mut bias_acc = 0.0;
                    for v in &up[up_c..up_c + out_plane] {
                        bias_acc += v;
                    }
                    db[co] += bias_acc;
                    for ci in 0..cin {
                        let x_c = ci * h * w;
                        for dkh in 0..kh {
                            let oh_lo = pt.saturating_sub(dkh);
                            let oh_hi = (h + pt).saturating_sub(dkh).min(oh_dim);
                            if oh_lo >= oh_hi {
                                continue;
                            }
                            for dkw in 0..kw {
                                let ow_lo = pl.saturating_sub(dkw);
                                let ow_hi = (w + pl).saturating_sub(dkw).min(ow_dim);
                                if ow_lo >= ow_hi {
                                    continue;
                                }
                                let len = ow_hi.saturating_sub(ow_lo);
                                let mut acc = 0.0;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh + dkh - pt;
                                    let xs = x_c + ih * w + ow_lo + dkw - pl;
                                    let us = up_c + oh * ow_dim + ow_lo;
                                    let xr = &x[xs..xs + len];
                                    let ur = &up[us..us + len];
                                    for (xv, uv) in xr.iter().zip(ur.iter()) {
                                        acc += xv * uv;
                                    }
                                }
                                dk[((co * cin + ci) * kh + dkh) * kw + dkw] += acc;
                            }
                        }
                    }
                }
            }
            (dk, db)
        })
        .collect();

    let mut d_kernels = Tensor::zeros(kernels.shape());
    let mut d_bias = Tensor::zeros(&[cout]);
    for (dk, db) in partials {
        for (a, b) in d_kernels.data_mut().iter_mut().zip(dk.iter()) {
            *a += b;
        }
        for (a, b) in d_bias.data_mut().iter_mut().zip(db.iter()) {
            *a += b;
        }
    }
    Ok(ConvGrads {
        input: d_input,
        kernels: d_kernels,
        bias: d_bias,
    })
}

fn check_depthwise_shapes(
    input: &Tensor,
    kernels: &Tensor,
    multiplier: usize,
    padding: Padding,
) -> Result<()> {
    if multiplier < 1 {
        return Err(Error::InvalidArgument(
            "depthwise multiplier must be at least 1".into(),
        ));
    }
    let ks = kernels.shape();
    if ks.len() != 4 {
        return Err(Error::shape("depthwise kernels", &[0, 0, 0, 0], ks));
    }
    let is = input.shape();
    let (c, h, w) = (is[is.len() - 3], is[is.len() - 2], is[is.len() - 1]);
    if ks[0] != c || ks[1] != multiplier {
        return Err(Error::shape(
            "depthwise kernels",
            &[c, multiplier, ks[2], ks[3]],
            ks,
        ));
    }
    if padding == Padding::Valid && (ks[2] > h || ks[3] > w) {
        return Err(Error::shape(
            "depthwise valid kernel extent",
            &[h, w],
            &[ks[2], ks[3]],
        ));
    }
    Ok(())
}

/// Batched depthwise convolution over `[N, C, H, W]` with kernels
/// `[C, D, kh, kw]`; channel c's D kernels see only channel c, and output
/// channel ordering is `c*D + d`.
pub fn depthwise_conv2d_forward_batch(
    input: &Tensor,
    kernels: &Tensor,
    multiplier: usize,
    padding: Padding,
) -> Result<Tensor> {
    check_depthwise_shapes(input, kernels, multiplier, padding)?;
    let is = input.shape();
    let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
    let ks = kernels.shape();
    let (kh, kw) = (ks[2], ks[3]);
    let (pt, pl, oh_dim, ow_dim) = padding.geometry(h, w, kh, kw);
    let mut out = Tensor::zeros(&[n, c * multiplier, oh_dim, ow_dim]);
    let in_stride = c * h * w;
    let out_stride = c * multiplier * oh_dim * ow_dim;
    let out_plane = oh_dim * ow_dim;
    out.data_mut()
        .par_chunks_mut(SAMPLE_CHUNK * out_stride)
        .zip(input.data().par_chunks(SAMPLE_CHUNK * in_stride))
        .for_each(|(out_chunk, in_chunk)| {
            for (o, x) in out_chunk
                .chunks_mut(out_stride)
                .zip(in_chunk.chunks(in_stride))
            {
                for ci in 0..c {
                    let x_c = ci * h * w;
                    for d in 0..multiplier {
                        let out_c = (ci * multiplier + d) * out_plane;
                        for dkh in 0..kh {
                            let oh_lo = pt.saturating_sub(dkh);
                            let oh_hi = (h + pt).saturating_sub(dkh).min(oh_dim);
                            if oh_lo >= oh_hi {
                                continue;
                            }
                            for dkw in 0..kw {
                                let weight =
                                    kernels.data()[((ci * multiplier + d) * kh + dkh) * kw + dkw];
                                let ow_lo = pl.saturating_sub(dkw);
                                let ow_hi = (w + pl).saturating_sub(dkw).min(ow_dim);
                                if ow_lo >= ow_hi {
                                    continue;
                                }
                                let len = ow_hi.saturating_sub(ow_lo);
                                for oh in oh_lo..oh_hi {
                                    let ih = oh + dkh - pt;
                                    let xs = x_c + ih * w + ow_lo + dkw - pl;
                                    let os = out_c + oh * ow_dim + ow_lo;
                                    let xr = &x[xs..xs + len];
                                    let or = &mut o[os..os + len];
                                    for (ov, xv) in or.iter_mut().zip(xr.iter()) {
                                        *ov += weight * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Depthwise convolution of a single `[C, H, W]` input.
pub fn depthwise_conv2d(
    input: &Tensor,
    kernels: &Tensor,
    multiplier: usize,
    padding: Padding,
) -> Result<Tensor> {
    let is = input.shape().to_vec();
    if is.len() != 3 {
        return Err(Error::shape("depthwise input", &[0, 0, 0], &is));
    }
    let batched = input.clone().reshaped(&[1, is[0], is[1], is[2]])?;
    let out = depthwise_conv2d_forward_batch(&batched, kernels, multiplier, padding)?;
    let os = out.shape().to_vec();
    out.reshaped(&[os[1], os[2], os[3]])
}

/// Gradients of the batched depthwise convolution.
pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    multiplier: usize,
    upstream: &Tensor,
    padding: Padding,
) -> Result<DepthwiseGrads> {
    let is = input.shape();
    let (n, c, h, w) = (is[0], is[1], is[2], is[3]);
    let ks = kernels.shape();
    let (kh, kw) = (ks[2], ks[3]);
    let (pt, pl, oh_dim, ow_dim) = padding.geometry(h, w, kh, kw);
    let expected = [n, c * multiplier, oh_dim, ow_dim];
    if upstream.shape() != expected {
        return Err(Error::shape(
            "depthwise upstream",
            &expected,
            upstream.shape(),
        ));
    }
    let in_stride = c * h * w;
    let out_stride = c * multiplier * oh_dim * ow_dim;
    let out_plane = oh_dim * ow_dim;

    let mut d_input = Tensor::zeros(&[n, c, h, w]);
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
                    let x_c = ci * h * w;
                    for d in 0..multiplier {
                        let up_c = (ci * multiplier + d) * out_plane;
                        for dkh in 0..kh {
                            let oh_lo = pt.saturating_sub(dkh);
                            let oh_hi = (h + pt).saturating_sub(dkh).min(oh_dim);
                            if oh_lo >= oh_hi {
                                continue;
                            }
                            for dkw in 0..kw {
                                let weight =
                                    kernels.data()[((ci * multiplier + d) * kh + dkh) * kw + dkw];
                                let ow_lo = pl.saturating_sub(dkw);
                                let ow_hi = (w + pl).saturating_sub(dkw).min(ow_dim);
                                if ow_lo >= ow_hi {
                                    continue;
                                }
                                let len = ow_hi.saturating_sub(ow_lo);
                                for oh in oh_lo..oh_hi {
                                    let ih = oh + dkh - pt;
                                    let xs = x_c + ih * w + ow_lo + dkw - pl;
                                    let us = up_c + oh * ow_dim + ow_lo;
                                    let dxr = &mut dx[xs..xs + len];
                                    let ur = &up[us..us + len];
                                    for (dv, uv) in dxr.iter_mut().zip(ur.iter()) {
                                        *dv += weight * uv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    let kn = kernels.len();
    let n_chunks = n.div_ceil(SAMPLE_CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * SAMPLE_CHUNK;
            let hi = ((chunk + 1) * SAMPLE_CHUNK).min(n);
            let mut dk = vec![0.0; kn];
            for s in lo..hi {
                let x = &input.data()[s * in_stride..(s + 1) * in_stride];
                let up = &upstream.data()[s * out_stride..(s + 1) * out_stride];
                for ci in 0..c {
                    let x_c = ci * h * w;
                    for d in 0..multiplier {
                        let up_c = (ci * multiplier + d) * out_plane;
                        for dkh in 0..kh {
                            let oh_lo = pt.saturating_sub(dkh);
                            let oh_hi = (h + pt).saturating_sub(dkh).min(oh_dim);
                            if oh_lo >= oh_hi {
                                continue;
                            }
                            for dkw in 0..kw {
                                let ow_lo = pl.saturating_sub(dkw);
                                let ow_hi = (w + pl).saturating_sub(dkw).min(ow_dim);
                                if ow_lo >= ow_hi {
                                    continue;
                                }
                                let len = ow_hi.saturating_sub(ow_lo);
                                let mut acc = 0.0;
                                for oh in oh_lo..oh_hi {
                                    let ih = oh + dkh - pt;
                                    let xs = x_c + ih * w + ow_lo + dkw - pl;
                                    let us = up_c + oh * ow_dim + ow_lo;
                                    let xr = &x[xs..xs + len];
                                    let ur = &up[us..us + len];
                                    for (xv, uv) in xr.iter().zip(ur.iter()) {
                                        acc += xv * uv;
                                    }
                                }
                                dk[((ci * multiplier + d) * kh + dkh) * kw + dkw] += acc;
                            }
                        }
                    }
                }
            }
            dk
        })
        .collect();

    let mut d_kernels = Tensor::zeros(kernels.shape());
    for dk in partials {
        for (a, b) in d_kernels.data_mut().iter_mut().zip(dk.iter()) {
            *a += b;
        }
    }
    Ok(DepthwiseGrads {
        input: d_input,
        kernels: d_kernels,
    })
}

/// Depthwise-separable convolution of a `[C, H, W]` input: a multiplier-1
/// depthwise stage (padding applies here) followed by a pointwise 1x1 mix.
/// Identical to composing `depthwise_conv2d` then `conv2d` with 1x1 kernels
/// and zero bias.
pub fn separable_conv2d(
    input: &Tensor,
    depth_kernels: &Tensor,
    point_kernels: &Tensor,
    padding: Padding,
) -> Result<Tensor> {
    let mid = depthwise_conv2d(input, depth_kernels, 1, padding)?;
    let cout = point_kernels.shape()[0];
    let zero_bias = Tensor::zeros(&[cout]);
    conv2d(&mid, point_kernels, &zero_bias, Padding::Valid)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Naive quadruple-loop convolution oracle, independent of the kernel
    /// implementation above.
    pub(crate) fn naive_conv2d(x: &Tensor, k: &Tensor, bias: &Tensor, padding: Padding) -> Tensor {
        let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (cout, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let (pt, pl, oh_dim, ow_dim) = padding.geometry(h, w, kh, kw);
        let mut out = Tensor::zeros(&[cout, oh_dim, ow_dim]);
        for co in 0..cout {
            for oh in 0..oh_dim {
                for ow in 0..ow_dim {
                    let mut acc = bias.data()[co];
                    for ci in 0..cin {
                        for dkh in 0..kh {
                            for dkw in 0..kw {
                                let ih = oh as isize + dkh as isize - pt as isize;
                                let iw = ow as isize + dkw as isize - pl as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(ci * h + ih as usize) * w + iw as usize]
                                    * k.data()[((co * cin + ci) * kh + dkh) * kw + dkw];
                            }
                        }
                    }
                    out.data_mut()[(co * oh_dim + oh) * ow_dim + ow] = acc;
                }
            }
        }
        out
    }

    fn seq_tensor(shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|i| (i as f64) * 0.37 - 1.1).collect()).unwrap()
    }

    #[test]
    fn conv2d_valid_hand_case() {
        // [[1,2,3],[4,5,6],[7,8,9]] against kernel [[1,0],[0,1]] picks the
        // diagonal sums: expected from the naive quadruple-loop oracle.
        let x = Tensor::from_vec(&[1, 3, 3], vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.data(), &[6., 8., 12., 14.]);
        let oracle = naive_conv2d(&x, &k, &b, Padding::Valid);
        assert_eq!(out.data(), oracle.data());
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = seq_tensor(&[1, 4, 5]);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let out = conv2d(&x, &k, &b, Padding::Valid).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn conv2d_zero_input_gives_zero_output() {
        let x = Tensor::zeros(&[2, 5, 6]);
        let k = seq_tensor(&[3, 2, 3, 3]);
        let b = Tensor::zeros(&[3]);
        let out = conv2d(&x, &k, &b, Padding::Same).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_matches_oracle_same_padding() {
        let x = seq_tensor(&[2, 5, 7]);
        let k = seq_tensor(&[3, 2, 1, 4]);
        let b = Tensor::from_vec(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        for padding in [Padding::Same, Padding::Valid] {
            let fast = conv2d(&x, &k, &b, padding).unwrap();
            let slow = naive_conv2d(&x, &k, &b, padding);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv2d_channel_mismatch_reports_both_shapes() {
        let x = seq_tensor(&[2, 4, 4]);
        let k = seq_tensor(&[3, 5, 2, 2]);
        let b = Tensor::zeros(&[3]);
        let err = conv2d(&x, &k, &b, Padding::Valid).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("[3, 5, 2, 2]") && msg.contains("[2, 4, 4]"),
            "{msg}"
        );
    }

    #[test]
    fn depthwise_identity() {
        let x = seq_tensor(&[2, 3, 4]);
        let k = Tensor::from_vec(&[2, 1, 1, 1], vec![1.0, 1.0]).unwrap();
        let out = depthwise_conv2d(&x, &k, 1, Padding::Valid).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn depthwise_au_axis_collapse_shape() {
        // Kernel (17,1) with multiplier 2 under valid padding collapses the
        // 17-row axis to 1 and doubles the channel count: 17 -> 34.
        let x = seq_tensor(&[17, 17, 87]);
        let k = seq_tensor(&[17, 2, 17, 1]);
        let out = depthwise_conv2d(&x, &k, 2, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[34, 1, 87]);
    }

    #[test]
    fn depthwise_channel_isolation() {
        let mut x = Tensor::zeros(&[3, 4, 4]);
        for v in x.data_mut()[..16].iter_mut() {
            *v = 1.5;
        }
        let k = seq_tensor(&[3, 2, 2, 2]);
        let out = depthwise_conv2d(&x, &k, 2, Padding::Valid).unwrap();
        let plane = out.shape()[1] * out.shape()[2];
        // Only output channels 0 and 1 (from input channel 0) may be nonzero.
        assert!(out.data()[..2 * plane].iter().any(|&v| v != 0.0));
        assert!(out.data()[2 * plane..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depthwise_rejects_zero_multiplier() {
        let x = seq_tensor(&[2, 3, 3]);
        let k = seq_tensor(&[2, 1, 1, 1]);
        assert!(depthwise_conv2d(&x, &k, 0, Padding::Valid).is_err());
    }

    #[test]
    fn depthwise_multiplier_one_equals_per_channel_conv2d() {
        let x = seq_tensor(&[3, 5, 6]);
        let k = seq_tensor(&[3, 1, 2, 3]);
        let out = depthwise_conv2d(&x, &k, 1, Padding::Valid).unwrap();
        for c in 0..3 {
            let xc = Tensor::from_vec(&[1, 5, 6], x.data()[c * 30..(c + 1) * 30].to_vec()).unwrap();
            let kc =
                Tensor::from_vec(&[1, 1, 2, 3], k.data()[c * 6..(c + 1) * 6].to_vec()).unwrap();
            let conv = conv2d(&xc, &kc, &Tensor::zeros(&[1]), Padding::Valid).unwrap();
            let plane = conv.len();
            assert_eq!(&out.data()[c * plane..(c + 1) * plane], conv.data());
        }
    }

    #[test]
    fn separable_identity() {
        let x = seq_tensor(&[3, 4, 4]);
        let dk = Tensor::from_vec(&[3, 1, 1, 1], vec![1.0; 3]).unwrap();
        // Pointwise identity: Cout = C with kernel[c][c] = 1.
        let mut pk = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            pk.data_mut()[c * 3 + c] = 1.0;
        }
        let out = separable_conv2d(&x, &dk, &pk, Padding::Valid).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn separable_matches_two_stage_composition() {
        let x = seq_tensor(&[3, 4, 4]);
        let dk = seq_tensor(&[3, 1, 2, 2]);
        let pk = seq_tensor(&[5, 3, 1, 1]);
        for padding in [Padding::Same, Padding::Valid] {
            let fused = separable_conv2d(&x, &dk, &pk, padding).unwrap();
            let mid = depthwise_conv2d(&x, &dk, 1, padding).unwrap();
            let composed = conv2d(&mid, &pk, &Tensor::zeros(&[5]), Padding::Valid).unwrap();
            assert_eq!(fused.shape(), composed.shape());
            for (a, b) in fused.data().iter().zip(composed.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_matches_naive_two_stage_oracle() {
        // Two-stage oracle: naive depthwise (via per-channel naive conv2d)
        // then naive pointwise conv.
        let x = seq_tensor(&[3, 4, 4]);
        let dk = seq_tensor(&[3, 1, 2, 2]);
        let pk = seq_tensor(&[2, 3, 1, 1]);
        let mut mid = Tensor::zeros(&[3, 3, 3]);
        for c in 0..3 {
            let xc = Tensor::from_vec(&[1, 4, 4], x.data()[c * 16..(c + 1) * 16].to_vec()).unwrap();
            let kc =
                Tensor::from_vec(&[1, 1, 2, 2], dk.data()[c * 4..(c + 1) * 4].to_vec()).unwrap();
            let oc = naive_conv2d(&xc, &kc, &Tensor::zeros(&[1]), Padding::Valid);
            mid.data_mut()[c * 9..(c + 1) * 9].copy_from_slice(oc.data());
        }
        let oracle = naive_conv2d(&mid, &pk, &Tensor::zeros(&[2]), Padding::Valid);
        let fused = separable_conv2d(&x, &dk, &pk, Padding::Valid).unwrap();
        for (a, b) in fused.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
