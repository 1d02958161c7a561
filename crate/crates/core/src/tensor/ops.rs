//! Forward and backward kernels for the primitive set.
//!
//! Every kernel is a pure function of its arguments. Image-like tensors are
//! laid out `[C, H, W]`; pixel `(x, y)` addresses column `x`, row `y`, and
//! integer coordinates land exactly on stored samples.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_odd_kernel(kh: usize, kw: usize) -> Result<()> {
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::dim("conv2d", "kernel kh/kw (must be odd)", &[kh, kw], &[kh | 1, kw | 1]));
    }
    Ok(())
}

/// Output spatial size of a convolution, validating the geometry.
pub fn conv2d_output_dims(
    input: &[usize],
    kernel: &[usize],
    stride: usize,
    pad: usize,
) -> Result<(usize, usize, usize)> {
    let [ci, h, w] = input[..] else {
        return Err(Error::dim("conv2d", "input rank (expected C_in,H,W)", input, &[0, 0, 0]));
    };
    let [co, kci, kh, kw] = kernel[..] else {
        return Err(Error::dim("conv2d", "kernel rank (expected C_out,C_in,kh,kw)", kernel, &[0, 0, 0, 0]));
    };
    if kci != ci {
        return Err(Error::dim("conv2d", "C_in (input axis 0 vs kernel axis 1)", &[kci], &[ci]));
    }
    check_odd_kernel(kh, kw)?;
    if stride == 0 {
        return Err(Error::Domain("conv2d stride must be >= 1".into()));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::dim("conv2d", "H,W (padded input smaller than kernel)", &[h + 2 * pad, w + 2 * pad], &[kh, kw]));
    }
    Ok((co, (h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1))
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let (co, ho, wo) = conv2d_output_dims(input.shape(), kernel.shape(), stride, pad)?;
    let (ci, h, w) = input.dims3("conv2d")?;
    let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for i in 0..kh {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..kw {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += k[((o * ci + c) * kh + i) * kw + j]
                                * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(vec![co, ho, wo], out)
}

/// Gradients of `conv2d` with respect to its input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let (co, ho, wo) = conv2d_output_dims(input.shape(), kernel.shape(), stride, pad)?;
    if grad_out.shape() != [co, ho, wo] {
        return Err(Error::dim("conv2d_backward", "grad_out", grad_out.shape(), &[co, ho, wo]));
    }
    let (ci, h, w) = input.dims3("conv2d_backward")?;
    let (kh, kw) = (kernel.shape()[2], kernel.shape()[3]);
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let go = g[(o * ho + oy) * wo + ox];
                if go == 0.0 {
                    continue;
                }
                for c in 0..ci {
                    for i in 0..kh {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..kw {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = (c * h + iy as usize) * w + ix as usize;
                            let ki = ((o * ci + c) * kh + i) * kw + j;
                            gx[xi] += k[ki] * go;
                            gk[ki] += x[xi] * go;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), gx)?,
        Tensor::new(kernel.shape().to_vec(), gk)?,
    ))
}

/// The four lattice neighbours of a continuous pixel coordinate and their
/// bilinear weights, or `None` when the point lies outside `[0, W-1] x [0, H-1]`.
pub fn bilinear_taps(height: usize, width: usize, x: f64, y: f64) -> Option<([usize; 4], [f64; 4])> {
    if !(x.is_finite() && y.is_finite()) || height == 0 || width == 0 {
        return None;
    }
    if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
        return None;
    }
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    Some((
        [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
        [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
    ))
}

/// Samples every channel of `image` at continuous `(x, y)` coordinates.
///
/// Returns `[C, N]` samples plus a validity flag per point. Out-of-bounds
/// points sample as zero and are flagged invalid.
pub fn bilinear_sample(image: &Tensor, xy: &[[f64; 2]]) -> Result<(Tensor, Vec<bool>)> {
    let (c, h, w) = image.dims3("bilinear_sample")?;
    let n = xy.len();
    let data = image.data();
    let mut out = vec![0.0; c * n];
    let mut valid = vec![false; n];
    for (p, &[x, y]) in xy.iter().enumerate() {
        let Some((idx, wt)) = bilinear_taps(h, w, x, y) else {
            continue;
        };
        valid[p] = true;
        for ch in 0..c {
            let plane = &data[ch * h * w..(ch + 1) * h * w];
            out[ch * n + p] = (0..4).map(|t| wt[t] * plane[idx[t]]).sum();
        }
    }
    Ok((Tensor::new(vec![c, n], out)?, valid))
}

/// Adjoint of [`bilinear_sample`]: pushes `[C, N]` values back onto a
/// `[C, H, W]` lattice with the same weights.
pub fn bilinear_scatter(values: &Tensor, xy: &[[f64; 2]], dims: (usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = dims;
    let n = xy.len();
    if values.shape() != [c, n] {
        return Err(Error::dim("bilinear_scatter", "values (C,N)", values.shape(), &[c, n]));
    }
    let v = values.data();
    let mut out = vec![0.0; c * h * w];
    for (p, &[x, y]) in xy.iter().enumerate() {
        let Some((idx, wt)) = bilinear_taps(h, w, x, y) else {
            continue;
        };
        for ch in 0..c {
            let g = v[ch * n + p];
            let plane = &mut out[ch * h * w..(ch + 1) * h * w];
            for t in 0..4 {
                plane[idx[t]] += wt[t] * g;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(t: &Tensor) -> Tensor {
    t.map(sigmoid_scalar)
}

fn axis_layout(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::dim(op, format!("axis {axis}"), &[axis], &[shape.len().saturating_sub(1)]));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Numerically stable softmax along `axis`.
pub fn softmax(t: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_layout(t.shape(), axis, "softmax")?;
    let x = t.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let m = (0..len).map(|k| x[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..len).map(|k| (x[at(k)] - m).exp()).sum();
            for k in 0..len {
                out[at(k)] = (x[at(k)] - m).exp() / z;
            }
        }
    }
    Tensor::new(t.shape().to_vec(), out)
}

/// Backward of softmax given its output `y`: `y * (g - sum(g * y))` per slice.
pub fn softmax_backward(y: &Tensor, grad: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_layout(y.shape(), axis, "softmax_backward")?;
    let (yd, gd) = (y.data(), grad.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            let s: f64 = (0..len).map(|k| gd[at(k)] * yd[at(k)]).sum();
            for k in 0..len {
                out[at(k)] = yd[at(k)] * (gd[at(k)] - s);
            }
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_map(b, "elementwise_mul", |x, y| x * y)
}

/// Concatenates along the leading (channel) axis. Trailing dims must agree.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Domain("concat_channels of zero tensors".into()))?;
    if first.rank() == 0 {
        return Err(Error::dim("concat_channels", "rank", &[0], &[1]));
    }
    let tail = &first.shape()[1..];
    let mut channels = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        if p.rank() == 0 || &p.shape()[1..] != tail {
            return Err(Error::dim("concat_channels", "trailing (spatial) axes", p.shape(), first.shape()));
        }
        channels += p.shape()[0];
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![channels];
    shape.extend_from_slice(tail);
    Tensor::new(shape, data)
}

/// Half-pixel source taps for 2x upsampling of an axis of length `n`.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling of a `[C, H, W]` tensor (half-pixel centers, edge clamp).
pub fn upsample2x_bilinear(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.dims3("upsample2x_bilinear")?;
    if h == 0 || w == 0 {
        return Err(Error::dim("upsample2x_bilinear", "H,W (must be nonzero)", &[h, w], &[1, 1]));
    }
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let x = t.data();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                out[(ch * ho + oy) * wo + ox] = (1.0 - fy) * ((1.0 - fx) * plane[y0 * w + x0] + fx * plane[y0 * w + x1])
                    + fy * ((1.0 - fx) * plane[y1 * w + x0] + fx * plane[y1 * w + x1]);
            }
        }
    }
    Tensor::new(vec![c, ho, wo], out)
}

pub fn upsample2x_backward(grad: &Tensor, input_dims: (usize, usize, usize)) -> Result<Tensor> {
    let (c, h, w) = input_dims;
    let (ho, wo) = (2 * h, 2 * w);
    if grad.shape() != [c, ho, wo] {
        return Err(Error::dim("upsample2x_backward", "grad", grad.shape(), &[c, ho, wo]));
    }
    let (ty, tx) = (upsample_taps(h), upsample_taps(w));
    let g = grad.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let plane = &mut out[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[(ch * ho + oy) * wo + ox];
                plane[y0 * w + x0] += (1.0 - fy) * (1.0 - fx) * v;
                plane[y0 * w + x1] += (1.0 - fy) * fx * v;
                plane[y1 * w + x0] += fy * (1.0 - fx) * v;
                plane[y1 * w + x1] += fy * fx * v;
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

/// Mean over channels: `[C, H, W] -> [1, H, W]`.
pub fn channel_mean(t: &Tensor) -> Result<Tensor> {
    let (c, h, w) = t.dims3("channel_mean")?;
    let x = t.data();
    let plane = h * w;
    let out = (0..plane)
        .map(|p| (0..c).map(|ch| x[ch * plane + p]).sum::<f64>() / c as f64)
        .collect();
    Tensor::new(vec![1, h, w], out)
}

/// Max over channels with the (first) arg-max channel per pixel.
pub fn channel_max(t: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = t.dims3("channel_max")?;
    if c == 0 {
        return Err(Error::dim("channel_max", "C (must be nonzero)", &[0], &[1]));
    }
    let x = t.data();
    let plane = h * w;
    let mut out = vec![0.0; plane];
    let mut arg = vec![0; plane];
    for p in 0..plane {
        let mut best = 0;
        for ch in 1..c {
            if x[ch * plane + p] > x[best * plane + p] {
                best = ch;
            }
        }
        arg[p] = best;
        out[p] = x[best * plane + p];
    }
    Ok((Tensor::new(vec![1, h, w], out)?, arg))
}

/// Multiplies every channel of `x: [C, H, W]` by the map `m: [1, H, W]`.
pub fn mul_channel_map(x: &Tensor, m: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3("mul_channel_map")?;
    if m.shape() != [1, h, w] {
        return Err(Error::dim("mul_channel_map", "map (1,H,W)", m.shape(), &[1, h, w]));
    }
    let plane = h * w;
    let (xd, md) = (x.data(), m.data());
    let out = (0..c * plane).map(|i| xd[i] * md[i % plane]).collect();
    Tensor::new(vec![c, h, w], out)
}

/// Per-channel `x * scale[c] + shift[c]` (folded batch normalization).
pub fn channel_affine(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.dims3("channel_affine")?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::dim("channel_affine", "scale/shift (C)", scale.shape(), &[c]));
    }
    let plane = h * w;
    let (xd, s, b) = (x.data(), scale.data(), shift.data());
    let out = (0..c * plane).map(|i| xd[i] * s[i / plane] + b[i / plane]).collect();
    Tensor::new(vec![c, h, w], out)
}

/// Sums consecutive groups of `group` entries along the last axis.
pub fn pool_groups(x: &Tensor, group: usize) -> Result<Tensor> {
    let last = *x.shape().last().ok_or_else(|| Error::dim("pool_groups", "rank", &[0], &[1]))?;
    if group == 0 || last % group != 0 {
        return Err(Error::dim("pool_groups", "last axis (multiple of group)", &[last], &[group]));
    }
    let out: Vec<f64> = x.data().chunks(group).map(|g| g.iter().sum()).collect();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = last / group;
    Tensor::new(shape, out)
}

/// Mean cross-entropy of `[K, ...]` logits against per-position targets.
///
/// Returns `(loss, softmax probabilities, number of counted positions)`.
pub fn cross_entropy(logits: &Tensor, targets: &[Option<usize>]) -> Result<(f64, Tensor, usize)> {
    let k = *logits.shape().first().ok_or_else(|| Error::dim("ce_loss", "rank", &[0], &[1]))?;
    let positions = logits.len() / k.max(1);
    if targets.len() != positions {
        return Err(Error::dim("ce_loss", "targets (positions)", &[targets.len()], &[positions]));
    }
    for &t in targets.iter().flatten() {
        if t >= k {
            return Err(Error::Label { label: t, classes: k });
        }
    }
    let probs = softmax(logits, 0)?;
    let x = logits.data();
    let mut total = 0.0;
    let mut count = 0;
    for (p, t) in targets.iter().enumerate() {
        let Some(t) = *t else { continue };
        let m = (0..k).map(|c| x[c * positions + p]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..k).map(|c| (x[c * positions + p] - m).exp()).sum::<f64>().ln();
        total += lse - x[t * positions + p];
        count += 1;
    }
    let loss = if count == 0 { 0.0 } else { total / count as f64 };
    Ok((loss, probs, count))
}

/// Mean binary cross-entropy computed from logits.
pub fn bce_with_logits(logits: &Tensor, target: &[f64]) -> Result<f64> {
    if logits.len() != target.len() {
        return Err(Error::dim("bce", "target length", &[target.len()], &[logits.len()]));
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = logits
        .data()
        .iter()
        .zip(target)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum();
    Ok(s / target.len() as f64)
}

/// Soft Dice loss `1 - (2 sum(p t) + eps) / (sum p + sum t + eps)`.
pub fn dice(probs: &Tensor, target: &[f64], eps: f64) -> Result<f64> {
    if probs.len() != target.len() {
        return Err(Error::dim("dice_loss", "target length", &[target.len()], &[probs.len()]));
    }
    let (inter, sp, st) = dice_sums(probs.data(), target);
    Ok(1.0 - (2.0 * inter + eps) / (sp + st + eps))
}

pub(crate) fn dice_sums(p: &[f64], t: &[f64]) -> (f64, f64, f64) {
    p.iter()
        .zip(t)
        .fold((0.0, 0.0, 0.0), |(i, a, b), (&p, &t)| (i + p * t, a + p, b + t))
}
