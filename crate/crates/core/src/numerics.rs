//! Dense f64 vector/matrix arithmetic and the differentiable primitives the
//! model is built from. Every backward pass here is derived by hand; the
//! [`grad_check`] helper compares them against central differences.

use serde::{Deserialize, Serialize};

use crate::error::{EscoError, Result};

/// Step used by [`grad_check`] for central differences.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EscoError::shape(
                "Mat::from_vec",
                rows * cols,
                data.len(),
            ));
        }
        ensure_finite("Mat::from_vec", &data)?;
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix by calling `f(row, col)` for each entry.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Appends a row; used when the classifier grows.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(EscoError::shape("Mat::push_row", self.cols, row.len()));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// `W x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(EscoError::shape("matvec", self.cols, x.len()));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `Wᵀ g`
    pub fn matvec_t(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.rows {
            return Err(EscoError::shape("matvec_t", self.rows, g.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                axpy(gr, self.row(r), &mut out);
            }
        }
        Ok(out)
    }

    /// `self += alpha · u vᵀ`
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &ur) in u.iter().enumerate() {
            let s = alpha * ur;
            if s != 0.0 {
                axpy(s, v, self.row_mut(r));
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn ensure_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(EscoError::NonFinite(format!("{what}[{i}] = {}", v[i]))),
    }
}

/// Cosine similarity `a·b / (‖a‖‖b‖)`. Zero-norm inputs are an error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(cosine_sim_with_grad(a, b)?.0)
}

/// Cosine similarity together with `∂/∂a` and `∂/∂b`.
pub fn cosine_sim_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if a.len() != b.len() {
        return Err(EscoError::shape("cosine_sim", a.len(), b.len()));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(EscoError::DegenerateVector);
    }
    let inv = 1.0 / (na * nb);
    let cos = (dot(a, b) * inv).clamp(-1.0, 1.0);
    // d cos / da = b/(|a||b|) - cos · a/|a|²
    let ca = cos / (na * na);
    let cb = cos / (nb * nb);
    let da = a.iter().zip(b).map(|(ai, bi)| bi * inv - ca * ai).collect();
    let db = a.iter().zip(b).map(|(ai, bi)| ai * inv - cb * bi).collect();
    Ok((cos, da, db))
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log Σ exp(z)` via max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// `−log softmax(logits)[target]` and its gradient `softmax(logits) − onehot(target)`.
pub fn softmax_ce(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(EscoError::TargetOutOfRange {
            target,
            classes: logits.len(),
        });
    }
    ensure_finite("logits", logits)?;
    let loss = (log_sum_exp(logits) - logits[target]).max(0.0);
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// `max(0, x)` with the subgradient at the kink taken as 0.
#[inline]
pub fn hinge(x: f64) -> (f64, f64) {
    if x > 0.0 {
        (x, 1.0)
    } else {
        (0.0, 0.0)
    }
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Chains an upstream gradient through `y = tanh(x)` given the output `y`.
pub fn tanh_backward(y: &[f64], upstream: &[f64]) -> Vec<f64> {
    y.iter().zip(upstream).map(|(y, g)| g * (1.0 - y * y)).collect()
}

/// `y = W x + b`
pub fn affine_forward(x: &[f64], w: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(EscoError::shape("affine_forward(bias)", w.rows(), b.len()));
    }
    let mut y = w.matvec(x)?;
    axpy(1.0, b, &mut y);
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub dx: Vec<f64>,
    pub dw: Mat,
    pub db: Vec<f64>,
}

/// Backward of [`affine_forward`] for upstream gradient `dy = ∂L/∂y`.
pub fn affine_backward(x: &[f64], w: &Mat, dy: &[f64]) -> Result<AffineGrads> {
    if x.len() != w.cols() {
        return Err(EscoError::shape("affine_backward(x)", w.cols(), x.len()));
    }
    let dx = w.matvec_t(dy)?;
    let mut dw = Mat::zeros(w.rows(), w.cols());
    dw.add_outer(1.0, dy, x);
    Ok(AffineGrads {
        dx,
        dw,
        db: dy.to_vec(),
    })
}

/// Compares an analytic gradient with central differences of `f` at `params`.
///
/// Returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(EscoError::shape("grad_check", params.len(), analytic.len()));
    }
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + GRAD_CHECK_EPS;
        let plus = f(&x)?;
        x[i] = orig - GRAD_CHECK_EPS;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(EscoError::NonFinite(format!(
                "grad_check: f(x ± eps) at coordinate {i}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * GRAD_CHECK_EPS);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
