//! Dense primitives shared by the encoder head, the tree indexer, and the
//! trainer.
//!
//! Trainable parameters live in `f64`; base embeddings stay `f32` and are
//! widened on the way in. Dot products and loss sums accumulate in `f64`.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `selfᵀ x`; `x` has length `rows`, the result has length `cols`.
    pub fn t_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * xr;
            }
        }
        out
    }

    /// `self y`; `y` has length `cols`, the result has length `rows`.
    pub fn mul_vec(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), y)).collect()
    }

    /// `self += x yᵀ`.
    pub fn add_outer(&mut self, x: &[f64], y: &[f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(y.len(), self.cols);
        let cols = self.cols;
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for (d, &yc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(y) {
                *d += xr * yc;
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty);
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    Ok(out)
}

/// Backpropagate through softmax: given `p = softmax(z)` and `dL/dp`,
/// returns `dL/dz = p ⊙ (dp − ⟨dp, p⟩)`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter()
        .zip(dp)
        .map(|(&pi, &gi)| pi * (gi - inner))
        .collect()
}

/// `x + ReLU(Uᵀ x)` for a square `U`.
pub fn relu_residual(x: &[f64], u: &Matrix) -> Result<Vec<f64>> {
    if u.rows() != u.cols() {
        return Err(Error::InvalidArgument(format!(
            "residual matrix must be square, got {}x{}",
            u.rows(),
            u.cols()
        )));
    }
    if x.len() != u.rows() {
        return Err(Error::dim(u.rows(), x.len()));
    }
    let pre = u.t_mul_vec(x);
    Ok(x.iter().zip(&pre).map(|(&a, &s)| a + s.max(0.0)).collect())
}

/// Central-difference gradient estimate of `f` at `p`.
pub fn finite_diff_grad<F>(mut f: F, p: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-5..=1e-2).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "eps {eps} outside [1e-5, 1e-2]"
        )));
    }
    let mut probe = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = probe[i];
        probe[i] = orig + eps;
        let plus = f(&probe);
        probe[i] = orig - eps;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite function value at coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative disagreement between an analytic and a numeric derivative.
///
/// Denominators are floored at `floor` so coordinates whose true gradient is
/// near zero are judged on absolute error.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub per_param_errors: Vec<(String, f64)>,
    /// Coordinates skipped because a hinge, ReLU, gate, or routing decision
    /// flips inside the probe interval.
    pub excluded: Vec<String>,
}

impl GradCheckReport {
    pub fn push(&mut self, name: String, err: f64) {
        self.max_rel_error = self.max_rel_error.max(err);
        self.per_param_errors.push((name, err));
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param_errors
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}
