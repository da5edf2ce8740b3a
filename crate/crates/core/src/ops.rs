//! Execution backends for the matrix primitives.
//!
//! Attention variants and the toy transformer are written once against
//! [`Ops`]. [`Eager`] evaluates immediately on [`Matrix`] values, the
//! [`Tape`](crate::tape::Tape) records for reverse-mode differentiation, and
//! [`Counting`] wraps either one to tally floating-point work.

use crate::error::Result;
use crate::matrix::Matrix;

pub trait Ops {
    type Value: Clone;

    fn shape(&self, v: &Self::Value) -> (usize, usize);
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value>;
    fn add_row_bias(&mut self, a: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn add_col_bias(&mut self, a: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn mul_row(&mut self, a: &Self::Value, gain: &Self::Value) -> Result<Self::Value>;
    fn softmax_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn causal_mask(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn slice_cols(&mut self, a: &Self::Value, start: usize, width: usize) -> Result<Self::Value>;
    fn slice_rows(&mut self, a: &Self::Value, start: usize, height: usize) -> Result<Self::Value>;
    fn concat_cols(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn concat_rows(&mut self, parts: &[Self::Value]) -> Result<Self::Value>;
    fn layer_norm_rows(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn gelu(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn gather_rows(&mut self, table: &Self::Value, ids: &[usize]) -> Result<Self::Value>;
    fn mean_row_blocks(&mut self, a: &Self::Value, block: usize) -> Result<Self::Value>;
    /// Mean cross-entropy as a `1 x 1` value.
    fn cross_entropy(&mut self, logits: &Self::Value, targets: &[usize]) -> Result<Self::Value>;
    /// Sum of all entries as a `1 x 1` value.
    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value>;
}

/// Immediate evaluation, no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Ops for Eager {
    type Value = Matrix;

    fn shape(&self, v: &Matrix) -> (usize, usize) {
        v.shape()
    }
    fn matmul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.matmul(b)
    }
    fn transpose(&mut self, a: &Matrix) -> Result<Matrix> {
        Ok(a.transpose())
    }
    fn add(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.add(b)
    }
    fn mul(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        a.mul(b)
    }
    fn scale(&mut self, a: &Matrix, s: f64) -> Result<Matrix> {
        Ok(a.scale(s))
    }
    fn add_row_bias(&mut self, a: &Matrix, bias: &Matrix) -> Result<Matrix> {
        a.add_row_bias(bias)
    }
    fn add_col_bias(&mut self, a: &Matrix, bias: &Matrix) -> Result<Matrix> {
        a.add_col_bias(bias)
    }
    fn mul_row(&mut self, a: &Matrix, gain: &Matrix) -> Result<Matrix> {
        a.mul_row(gain)
    }
    fn softmax_rows(&mut self, a: &Matrix) -> Result<Matrix> {
        Ok(a.softmax_rows())
    }
    fn causal_mask(&mut self, a: &Matrix) -> Result<Matrix> {
        a.apply_causal_mask()
    }
    fn slice_cols(&mut self, a: &Matrix, start: usize, width: usize) -> Result<Matrix> {
        a.slice_cols(start, width)
    }
    fn slice_rows(&mut self, a: &Matrix, start: usize, height: usize) -> Result<Matrix> {
        a.slice_rows(start, height)
    }
    fn concat_cols(&mut self, parts: &[Matrix]) -> Result<Matrix> {
        Matrix::concat_cols(&parts.iter().collect::<Vec<_>>())
    }
    fn concat_rows(&mut self, parts: &[Matrix]) -> Result<Matrix> {
        Matrix::concat_rows(&parts.iter().collect::<Vec<_>>())
    }
    fn layer_norm_rows(&mut self, a: &Matrix) -> Result<Matrix> {
        Ok(a.layer_norm_rows())
    }
    fn gelu(&mut self, a: &Matrix) -> Result<Matrix> {
        Ok(a.gelu())
    }
    fn gather_rows(&mut self, table: &Matrix, ids: &[usize]) -> Result<Matrix> {
        table.gather_rows(ids)
    }
    fn mean_row_blocks(&mut self, a: &Matrix, block: usize) -> Result<Matrix> {
        a.mean_row_blocks(block)
    }
    fn cross_entropy(&mut self, logits: &Matrix, targets: &[usize]) -> Result<Matrix> {
        Ok(Matrix::filled(1, 1, logits.cross_entropy(targets)?))
    }
    fn sum(&mut self, a: &Matrix) -> Result<Matrix> {
        Ok(Matrix::filled(1, 1, a.sum()))
    }
}

/// Counts FLOPs while delegating to an inner backend.
///
/// A `m x k` by `k x n` product costs `2mkn`; a row softmax over an
/// `r x c` input costs `5rc` (max, subtract, exp, sum, divide). Nothing else
/// is counted, which mirrors the terms of
/// [`flops_exact_forward`](crate::cost::flops_exact_forward).
#[derive(Debug, Default)]
pub struct Counting<O> {
    pub inner: O,
    pub flops: u64,
}

impl<O> Counting<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, flops: 0 }
    }
}

impl<O: Ops> Ops for Counting<O> {
    type Value = O::Value;

    fn shape(&self, v: &O::Value) -> (usize, usize) {
        self.inner.shape(v)
    }
    fn matmul(&mut self, a: &O::Value, b: &O::Value) -> Result<O::Value> {
        let out = self.inner.matmul(a, b)?;
        let (m, k) = self.inner.shape(a);
        let n = self.inner.shape(b).1;
        self.flops += 2 * (m * k * n) as u64;
        Ok(out)
    }
    fn transpose(&mut self, a: &O::Value) -> Result<O::Value> {
        self.inner.transpose(a)
    }
    fn add(&mut self, a: &O::Value, b: &O::Value) -> Result<O::Value> {
        self.inner.add(a, b)
    }
    fn mul(&mut self, a: &O::Value, b: &O::Value) -> Result<O::Value> {
        self.inner.mul(a, b)
    }
    fn scale(&mut self, a: &O::Value, s: f64) -> Result<O::Value> {
        self.inner.scale(a, s)
    }
    fn add_row_bias(&mut self, a: &O::Value, bias: &O::Value) -> Result<O::Value> {
        self.inner.add_row_bias(a, bias)
    }
    fn add_col_bias(&mut self, a: &O::Value, bias: &O::Value) -> Result<O::Value> {
        self.inner.add_col_bias(a, bias)
    }
    fn mul_row(&mut self, a: &O::Value, gain: &O::Value) -> Result<O::Value> {
        self.inner.mul_row(a, gain)
    }
    fn softmax_rows(&mut self, a: &O::Value) -> Result<O::Value> {
        let (r, c) = self.inner.shape(a);
        self.flops += 5 * (r * c) as u64;
        self.inner.softmax_rows(a)
    }
    fn causal_mask(&mut self, a: &O::Value) -> Result<O::Value> {
        self.inner.causal_mask(a)
    }
    fn slice_cols(&mut self, a: &O::Value, start: usize, width: usize) -> Result<O::Value> {
        self.inner.slice_cols(a, start, width)
    }
    fn slice_rows(&mut self, a: &O::Value, start: usize, height: usize) -> Result<O::Value> {
        self.inner.slice_rows(a, start, height)
    }
    fn concat_cols(&mut self, parts: &[O::Value]) -> Result<O::Value> {
        self.inner.concat_cols(parts)
    }
    fn concat_rows(&mut self, parts: &[O::Value]) -> Result<O::Value> {
        self.inner.concat_rows(parts)
    }
    fn layer_norm_rows(&mut self, a: &O::Value) -> Result<O::Value> {
        self.inner.layer_norm_rows(a)
    }
    fn gelu(&mut self, a: &O::Value) -> Result<O::Value> {
        self.inner.gelu(a)
    }
    fn gather_rows(&mut self, table: &O::Value, ids: &[usize]) -> Result<O::Value> {
        self.inner.gather_rows(table, ids)
    }
    fn mean_row_blocks(&mut self, a: &O::Value, block: usize) -> Result<O::Value> {
        self.inner.mean_row_blocks(a, block)
    }
    fn cross_entropy(&mut self, logits: &O::Value, targets: &[usize]) -> Result<O::Value> {
        self.inner.cross_entropy(logits, targets)
    }
    fn sum(&mut self, a: &O::Value) -> Result<O::Value> {
        self.inner.sum(a)
    }
}
