//! Dense row-major `f64` tensors and the few matrix products the model needs.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D tensor; a 1-D tensor is one row.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => (1, self.data.len()),
        }
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(ModelError::ShapeMismatch(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: *mut f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the assert bounds every index the strides can produce; the
    // caller guarantees c points at m * n writable values not aliasing a or b,
    // initialised unless beta is zero (dgemm never reads c when beta == 0).
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c, n as isize, 1);
    }
}

/// Fresh `m x n` result of a `beta = 0` product.
fn gemm_new(m: usize, n: usize, f: impl FnOnce(*mut f64)) -> Vec<f64> {
    if m * n == 0 {
        return vec![0.0; m * n];
    }
    let mut c: Vec<f64> = Vec::with_capacity(m * n);
    f(c.as_mut_ptr());
    // SAFETY: dgemm wrote all m * n entries.
    unsafe { c.set_len(m * n) };
    c
}

/// `A (m x k) * B (k x n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if k == 0 {
        return vec![0.0; m * n];
    }
    gemm_new(m, n, |c| gemm(m, k, n, a, k as isize, 1, b, n as isize, 1, 0.0, c))
}

/// `A (m x k) * B^T` where `B` is stored `n x k` (the layout of a linear
/// layer's weight).
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    if k == 0 {
        return vec![0.0; m * n];
    }
    gemm_new(m, n, |c| gemm(m, k, n, a, k as isize, 1, b, 1, k as isize, 0.0, c))
}

/// `c += A^T (k x m) * B (m x n)` with `A` stored `m x k`; result `k x n`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    assert!(c.len() >= k * n);
    gemm(k, m, n, a, 1, k as isize, b, n as isize, 1, 1.0, c.as_mut_ptr());
}

/// Row-wise affine map `X W^T + b` for `X: rows x d_in`, `W: d_out x d_in`.
pub fn linear(x: &[f64], w: &[f64], bias: Option<&[f64]>, rows: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = matmul_nt(x, w, rows, d_in, d_out);
    if let Some(b) = bias {
        for row in y.chunks_exact_mut(d_out) {
            for (v, bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
    y
}

/// Column sums of a `rows x cols` matrix added into `out`.
pub fn col_sum_acc(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn products_agree() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.3).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.7).cos()).collect();
        let want = naive(&a, &b, m, k, n);
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(u, v)| (u - v).abs() < 1e-12);
        assert!(close(&matmul(&a, &b, m, k, n), &want));
        assert!(close(&matmul_nt(&a, &transpose(&b, k, n), m, k, n), &want));
        let mut acc = vec![0.0; m * n];
        matmul_tn_acc(&transpose(&a, m, k), &b, k, m, n, &mut acc);
        assert!(close(&acc, &want));
    }

    #[test]
    fn shape_checked() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::zeros(&[2, 3]);
        assert_eq!(t.dims2(), (2, 3));
        assert!(t.expect_shape(&[3, 2], "t").is_err());
    }
}
