//! Forward kernels on plain tensors. The graph wraps these and adds the
//! matching vector-Jacobian products.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Epsilon inside the RMS-norm square root.
pub const RMS_EPS: f64 = 1e-6;

/// Base of the rotary frequency ladder.
pub const ROPE_BASE: f64 = 10000.0;

/// `c[m,n] = a[m,k] * b[k,n]`, accumulated into `out`.
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`.
pub(crate) fn gemm_bt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            out[i * n + j] += s;
        }
    }
}

/// `c[k,n] += a[m,k]^T * b[m,n]`.
pub(crate) fn gemm_at_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    gemm_acc(a.data(), b.data(), &mut out, m, k, n);
    Ok(Tensor::matrix(m, n, out))
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Softmax over the last axis. `mask`, when given, has one flag per element
/// and excluded entries get exactly zero weight.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let (r, c) = (x.rows(), x.cols());
    if let Some(m) = mask {
        if m.len() != r * c {
            return Err(Error::Shape(format!(
                "mask length {} for {r}x{c} logits",
                m.len()
            )));
        }
    }
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let allowed = |j: usize| mask.is_none_or(|m| m[i * c + j]);
        let mut max = f64::NEG_INFINITY;
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) && v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            return Err(Error::EmptyAttentionRow(i));
        }
        let mut total = 0.0;
        let out_row = &mut out[i * c..(i + 1) * c];
        for (j, &v) in row.iter().enumerate() {
            if allowed(j) {
                let e = (v - max).exp();
                out_row[j] = e;
                total += e;
            }
        }
        for o in out_row.iter_mut() {
            *o /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Softmax along `axis` of a tensor of rank <= 2.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let rank = x.shape().len();
    if axis + 1 == rank {
        softmax_rows(x, None)
    } else if rank == 2 && axis == 0 {
        Ok(softmax_rows(&x.transpose(), None)?.transpose())
    } else {
        Err(Error::InvalidArgument(format!(
            "softmax axis {axis} on rank-{rank} tensor"
        )))
    }
}

/// Each last-axis slice divided by `sqrt(mean(x^2) + eps)`, scaled by `gain`.
pub fn rms_norm(x: &Tensor, gain: &Tensor) -> Result<Tensor> {
    let c = x.cols();
    if gain.len() != c {
        return Err(Error::Shape(format!(
            "rms_norm gain length {} for last axis {c}",
            gain.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    for i in 0..x.rows() {
        let row = x.row(i);
        let inv = rms_inv(row);
        for j in 0..c {
            out[i * c + j] = row[j] * inv * gain.data()[j];
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn rms_inv(row: &[f64]) -> f64 {
    let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
    1.0 / (ms + RMS_EPS).sqrt()
}

/// Rotation frequency of channel pair `i` for model width `d`.
pub fn rope_theta(i: usize, d: usize) -> f64 {
    ROPE_BASE.powf(-2.0 * i as f64 / d as f64)
}

/// Rotates each channel pair of `x` by `position * theta_i`. `sign` of -1
/// applies the inverse rotation.
pub(crate) fn rope_row(x: &[f64], out: &mut [f64], position: f64, sign: f64) {
    let d = x.len();
    for i in 0..d / 2 {
        let angle = sign * position * rope_theta(i, d);
        let (s, c) = angle.sin_cos();
        let (a, b) = (x[2 * i], x[2 * i + 1]);
        out[2 * i] = a * c - b * s;
        out[2 * i + 1] = a * s + b * c;
    }
}

/// Rotary position encoding of a single vector at `position`.
pub fn rope_rotate(x: &[f64], position: i64) -> Result<Vec<f64>> {
    if x.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "rotary encoding needs an even width, got {}",
            x.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    rope_row(x, &mut out, position as f64, 1.0);
    Ok(out)
}

/// Depth-wise 1-D convolution over the sequence axis with zero padding.
///
/// `x` is laid out `[length, channels]` (one row per position) and `kernels`
/// is `[channels, k]` with odd `k`. Tap `j` of channel `c` reads position
/// `t + j - k/2`.
pub fn depthwise_conv1d(x: &Tensor, kernels: &Tensor) -> Result<Tensor> {
    let (len, ch) = (x.rows(), x.cols());
    let k = kernels.cols();
    if kernels.rows() != ch {
        return Err(Error::Shape(format!(
            "depthwise kernels {:?} for {ch} channels",
            kernels.shape()
        )));
    }
    if k % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "depthwise kernel width must be odd, got {k}"
        )));
    }
    let half = k / 2;
    let w = kernels.data();
    let xd = x.data();
    let mut out = vec![0.0; len * ch];
    for t in 0..len {
        for j in 0..k {
            let s = t as isize + j as isize - half as isize;
            if s < 0 || s as usize >= len {
                continue;
            }
            let src = &xd[s as usize * ch..(s as usize + 1) * ch];
            let dst = &mut out[t * ch..(t + 1) * ch];
            for c in 0..ch {
                dst[c] += w[c * k + j] * src[c];
            }
        }
    }
    Ok(Tensor::matrix(len, ch, out))
}
