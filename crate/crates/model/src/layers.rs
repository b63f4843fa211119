//! Stateless building blocks with their exact derivatives.

use crate::error::{ModelError, Result};
use crate::tensor::{linear, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Number of patches a window of `window_len` yields.
pub fn patch_count(window_len: usize, patch_len: usize, stride: usize) -> Result<usize> {
    if patch_len == 0 || stride == 0 || patch_len > window_len {
        return Err(ModelError::InvalidConfig(format!(
            "cannot patch a window of {window_len} with patch {patch_len}, stride {stride}"
        )));
    }
    Ok((window_len - patch_len) / stride + 1)
}

/// Rows `window[i*stride .. i*stride+patch_len)`, row-major `P x patch_len`.
pub fn patchify(window: &[f64], patch_len: usize, stride: usize) -> Result<Tensor> {
    let p = patch_count(window.len(), patch_len, stride)?;
    let mut data = Vec::with_capacity(p * patch_len);
    for i in 0..p {
        data.extend_from_slice(&window[i * stride..i * stride + patch_len]);
    }
    Tensor::new(vec![p, patch_len], data)
}

/// Row-wise `patches * kernel^T + bias` with `kernel: d_model x patch_len`.
pub fn value_embed(patches: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (p, l) = patches.dims2();
    let (d, kl) = kernel.dims2();
    if kernel.shape().len() != 2 || kl != l || bias.len() != d {
        return Err(ModelError::ShapeMismatch(format!(
            "kernel {:?} / bias {} do not fit patches {:?}",
            kernel.shape(),
            bias.len(),
            patches.shape()
        )));
    }
    Tensor::new(vec![p, d], linear(patches.data(), kernel.data(), Some(bias), p, l, d))
}

/// `(t, 2k) = sin(w_k t)`, `(t, 2k+1) = cos(w_k t)` with `w_k = 10000^(-2k/d)`.
pub fn sinusoidal_position_table(p: usize, d_model: usize) -> Result<Tensor> {
    if d_model % 2 != 0 {
        return Err(ModelError::OddDimension(d_model));
    }
    let mut data = vec![0.0; p * d_model];
    for k in 0..d_model / 2 {
        let w = 10000f64.powf(-2.0 * k as f64 / d_model as f64);
        for t in 0..p {
            let (s, c) = (w * t as f64).sin_cos();
            data[t * d_model + 2 * k] = s;
            data[t * d_model + 2 * k + 1] = c;
        }
    }
    Tensor::new(vec![p, d_model], data)
}

/// Per-row normalisation statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LnCache {
    pub xhat: Vec<f64>,
    pub rstd: Vec<f64>,
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta` over each row of `x`.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> (Vec<f64>, LnCache) {
    let d = gamma.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates into `dgamma`/`dbeta` when given.
pub fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gamma: &[f64],
    mut dgamma: Option<&mut [f64]>,
    mut dbeta: Option<&mut [f64]>,
) -> Vec<f64> {
    let d = gamma.len();
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..d {
            dxhat[j] = dyr[j] * gamma[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - m1 - xh[j] * m2);
        }
        if let Some(g) = dgamma.as_deref_mut() {
            for j in 0..d {
                g[j] += dyr[j] * xh[j];
            }
        }
        if let Some(b) = dbeta.as_deref_mut() {
            for j in 0..d {
                b[j] += dyr[j];
            }
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    gelu_from_tanh(x, gelu_tanh(x))
}

pub fn gelu_grad(x: f64) -> f64 {
    gelu_grad_from_tanh(x, gelu_tanh(x))
}

/// The `tanh` term shared by [`gelu`] and its derivative.
pub fn gelu_tanh(x: f64) -> f64 {
    (GELU_C * (x + GELU_A * x * x * x)).tanh()
}

pub fn gelu_from_tanh(x: f64, t: f64) -> f64 {
    0.5 * x * (1.0 + t)
}

pub fn gelu_grad_from_tanh(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// In-place softmax of each row of length `n`. Entries set to `-inf` get 0.
pub fn softmax_rows(x: &mut [f64], n: usize) {
    for row in x.chunks_exact_mut(n) {
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}
