//! Dense row-major `f64` matrices and the primitive kernels every attention
//! variant is built from.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Stand-in for `-inf` written by [`Matrix::apply_causal_mask`].
///
/// It is the most negative finite double, so `exp(MASKED - row_max)` is
/// exactly zero while every entry stays finite.
pub const MASKED: f64 = f64::MIN;

/// Default relative tolerance for [`Matrix::numerical_rank`].
pub const RANK_TOL: f64 = 1e-8;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension {
                op: "new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                op: "new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension {
                op: "from_rows",
                left: (rows.len(), cols),
                right: (1, bad.len()),
            });
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data).expect("positive dimensions")
    }

    /// Entries drawn uniformly from `[-bound, bound)`, row-major draw order.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.uniform(bound))
    }

    pub fn normal(rows: usize, cols: usize, rng: &mut Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.normal())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(other, op)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            let a_row = &self.data[i * k..(i + 1) * k];
            for (p, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix { rows: m, cols: n, data: out })
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data: out,
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| x * s)
    }

    /// Adds a `1 x cols` vector to every row.
    pub fn add_row_bias(&self, bias: &Matrix) -> Result<Matrix> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(Error::Dimension {
                op: "add_row_bias",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            for (o, b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Adds a `rows x 1` vector to every column (entry `r` goes to all of row `r`).
    pub fn add_col_bias(&self, bias: &Matrix) -> Result<Matrix> {
        if bias.cols != 1 || bias.rows != self.rows {
            return Err(Error::Dimension {
                op: "add_col_bias",
                left: self.shape(),
                right: bias.shape(),
            });
        }
        let mut out = self.clone();
        for (row, b) in out.data.chunks_exact_mut(self.cols).zip(&bias.data) {
            for o in row {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Multiplies every row elementwise by a `1 x cols` vector.
    pub fn mul_row(&self, gain: &Matrix) -> Result<Matrix> {
        if gain.rows != 1 || gain.cols != self.cols {
            return Err(Error::Dimension {
                op: "mul_row",
                left: self.shape(),
                right: gain.shape(),
            });
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            for (o, g) in row.iter_mut().zip(&gain.data) {
                *o *= g;
            }
        }
        Ok(out)
    }

    pub fn col_sums(&self) -> Matrix {
        let mut out = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Matrix {
            rows: 1,
            cols: self.cols,
            data: out,
        }
    }

    pub fn row_sums(&self) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: 1,
            data: self.data.chunks_exact(self.cols).map(|r| r.iter().sum()).collect(),
        }
    }

    /// Row-wise softmax with max subtraction. Entries equal to [`MASKED`]
    /// come out as exactly zero.
    pub fn softmax_rows(&self) -> Matrix {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = if *x == MASKED { 0.0 } else { (*x - max).exp() };
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        out
    }

    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Matrix> {
        if width == 0 || start + width > self.cols {
            return Err(Error::Bounds {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {}", start + width, self.cols),
            });
        }
        let mut data = Vec::with_capacity(self.rows * width);
        for row in self.data.chunks_exact(self.cols) {
            data.extend_from_slice(&row[start..start + width]);
        }
        Ok(Matrix {
            rows: self.rows,
            cols: width,
            data,
        })
    }

    pub fn slice_rows(&self, start: usize, height: usize) -> Result<Matrix> {
        if height == 0 || start + height > self.rows {
            return Err(Error::Bounds {
                op: "slice_rows",
                detail: format!("rows {start}..{} of {}", start + height, self.rows),
            });
        }
        Ok(Matrix {
            rows: height,
            cols: self.cols,
            data: self.data[start * self.cols..(start + height) * self.cols].to_vec(),
        })
    }

    pub fn concat_cols(parts: &[&Matrix]) -> Result<Matrix> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let rows = first.rows;
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: first.shape(),
                right: bad.shape(),
            });
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn concat_rows(parts: &[&Matrix]) -> Result<Matrix> {
        let first = parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let cols = first.cols;
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(Error::Dimension {
                op: "concat_rows",
                left: first.shape(),
                right: bad.shape(),
            });
        }
        let rows = parts.iter().map(|p| p.rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Replaces every entry above the diagonal with [`MASKED`].
    pub fn apply_causal_mask(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(Error::Dimension {
                op: "apply_causal_mask",
                left: self.shape(),
                right: (self.rows, self.rows),
            });
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                out.data[r * self.cols + c] = MASKED;
            }
        }
        Ok(out)
    }

    /// Zeroes the strict upper triangle. Works on any shape.
    pub fn lower_triangular(&self) -> Matrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            for c in r + 1..self.cols {
                out.data[r * self.cols + c] = 0.0;
            }
        }
        out
    }

    /// Per-row normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&self) -> Matrix {
        let n = self.cols as f64;
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.cols) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        out
    }

    pub fn gelu(&self) -> Matrix {
        self.map(gelu)
    }

    /// Stacks the rows of `self` selected by `ids`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Matrix> {
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no ids".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &id in ids {
            if id >= self.rows {
                return Err(Error::Bounds {
                    op: "gather_rows",
                    detail: format!("row {id} of {}", self.rows),
                });
            }
            data.extend_from_slice(self.row(id));
        }
        Ok(Matrix {
            rows: ids.len(),
            cols: self.cols,
            data,
        })
    }

    /// Averages consecutive blocks of `block` rows: `(n*block) x d -> n x d`.
    pub fn mean_row_blocks(&self, block: usize) -> Result<Matrix> {
        if block == 0 || !self.rows.is_multiple_of(block) {
            return Err(Error::Bounds {
                op: "mean_row_blocks",
                detail: format!("{} rows not divisible by block {block}", self.rows),
            });
        }
        let n = self.rows / block;
        let mut out = Matrix::zeros(n, self.cols);
        for r in 0..self.rows {
            let dst = &mut out.data[(r / block) * self.cols..(r / block + 1) * self.cols];
            for (o, x) in dst.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        Ok(out.scale(1.0 / block as f64))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<f64> {
        if targets.len() != self.rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: self.shape(),
                right: (targets.len(), 1),
            });
        }
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= self.cols {
                return Err(Error::Bounds {
                    op: "cross_entropy",
                    detail: format!("target {t} with {} classes", self.cols),
                });
            }
            let row = self.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        Ok(total / self.rows as f64)
    }

    /// Index of the largest entry in each row; ties go to the smaller index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.data
            .chunks_exact(self.cols)
            .map(|row| {
                let mut best = 0;
                for (i, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    /// Number of pivots found by Gaussian elimination with partial pivoting
    /// whose magnitude exceeds `tol` times the largest pivot.
    pub fn numerical_rank(&self, tol: f64) -> usize {
        let (m, n) = self.shape();
        let mut a = self.data.clone();
        let scale = a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        if scale == 0.0 {
            return 0;
        }
        let mut pivots = Vec::new();
        let mut row = 0;
        for col in 0..n {
            if row == m {
                break;
            }
            let (best, mag) = (row..m)
                .map(|r| (r, a[r * n + col].abs()))
                .fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if mag <= tol * scale {
                continue;
            }
            if best != row {
                for c in 0..n {
                    a.swap(best * n + c, row * n + c);
                }
            }
            let pivot = a[row * n + col];
            for r in row + 1..m {
                let factor = a[r * n + col] / pivot;
                if factor != 0.0 {
                    for c in col..n {
                        a[r * n + c] -= factor * a[row * n + c];
                    }
                }
            }
            pivots.push(mag);
            row += 1;
        }
        let largest = pivots.iter().copied().fold(0.0, f64::max);
        pivots.iter().filter(|&&p| p > tol * largest).count()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
