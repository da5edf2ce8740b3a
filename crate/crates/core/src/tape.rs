//! Matrix-level reverse-mode differentiation.
//!
//! Every primitive applied through [`Ops`] appends one node holding its
//! output value. Nodes only reference earlier nodes, so the tape is already
//! in topological order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{Error, Result};
use crate::matrix::{gelu_grad, Matrix, LAYER_NORM_EPS, MASKED};
use crate::ops::Ops;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    AddColBias(Var, Var),
    MulRow(Var, Var),
    Softmax(Var),
    CausalMask(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    LayerNorm(Var),
    Gelu(Var),
    Gather(Var, Vec<usize>),
    MeanRowBlocks(Var, usize),
    CrossEntropy(Var, Vec<usize>),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints from one backward sweep, one per node.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Matrix>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> &Matrix {
        &self.adjoints[v.0]
    }

    pub fn len(&self) -> usize {
        self.adjoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjoints.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: &Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Reverse sweep from a scalar node. Nodes the loss does not depend on
    /// get zero adjoints of their own shape.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_shape = self.val(&loss).shape();
        if loss_shape != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {loss_shape:?}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.matmul(&self.val(b).transpose())?;
                    let gb = self.val(a).transpose().matmul(&g)?;
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Transpose(a) => accumulate(&mut adj, *a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g.clone());
                }
                Op::Mul(a, b) => {
                    accumulate(&mut adj, *a, g.mul(self.val(b))?);
                    accumulate(&mut adj, *b, g.mul(self.val(a))?);
                }
                Op::Scale(a, s) => accumulate(&mut adj, *a, g.scale(*s)),
                Op::AddRowBias(a, b) => {
                    accumulate(&mut adj, *b, g.col_sums());
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::AddColBias(a, b) => {
                    accumulate(&mut adj, *b, g.row_sums());
                    accumulate(&mut adj, *a, g.clone());
                }
                Op::MulRow(a, gain) => {
                    accumulate(&mut adj, *gain, g.mul(self.val(a))?.col_sums());
                    accumulate(&mut adj, *a, g.mul_row(self.val(gain))?);
                }
                Op::Softmax(a) => {
                    // dX = Y * (G - rowsum(G * Y))
                    let mut dx = g.mul(out)?;
                    let dots = dx.row_sums();
                    let cols = out.cols();
                    for (r, row) in dx.data_mut().chunks_exact_mut(cols).enumerate() {
                        let dot = dots.data()[r];
                        for (c, x) in row.iter_mut().enumerate() {
                            *x -= out.get(r, c) * dot;
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::CausalMask(a) => accumulate(&mut adj, *a, g.lower_triangular()),
                Op::SliceCols(a, start) => {
                    let src = self.val(a);
                    let mut dx = Matrix::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dx.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::SliceRows(a, start) => {
                    let src = self.val(a);
                    let mut dx = Matrix::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    dx.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                    accumulate(&mut adj, *a, dx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let width = self.val(p).cols();
                        accumulate(&mut adj, *p, g.slice_cols(offset, width)?);
                        offset += width;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let height = self.val(p).rows();
                        accumulate(&mut adj, *p, g.slice_rows(offset, height)?);
                        offset += height;
                    }
                }
                Op::LayerNorm(a) => {
                    // dx = (g - mean(g) - y * mean(g * y)) / sigma
                    let x = self.val(a);
                    let n = x.cols() as f64;
                    let mut dx = Matrix::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (gr, yr) = (g.row(r), out.row(r));
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for c in 0..x.cols() {
                            dx.set(r, c, inv * (gr[c] - g_mean - yr[c] * gy_mean));
                        }
                    }
                    accumulate(&mut adj, *a, dx);
                }
                Op::Gelu(a) => {
                    let dx = self.val(a).map(gelu_grad).mul(&g)?;
                    accumulate(&mut adj, *a, dx);
                }
                Op::Gather(table, ids) => {
                    let src = self.val(table);
                    let mut dx = Matrix::zeros(src.rows(), src.cols());
                    let cols = src.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        let dst = &mut dx.data_mut()[id * cols..(id + 1) * cols];
                        for (d, x) in dst.iter_mut().zip(g.row(r)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut adj, *table, dx);
                }
                Op::MeanRowBlocks(a, block) => {
                    let src = self.val(a);
                    let inv = 1.0 / *block as f64;
                    let dx = Matrix::from_fn(src.rows(), src.cols(), |r, c| g.get(r / block, c) * inv);
                    accumulate(&mut adj, *a, dx);
                }
                Op::CrossEntropy(logits, targets) => {
                    let z = self.val(logits);
                    let mut dx = z.softmax_rows();
                    let scale = g.get(0, 0) / z.rows() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        let v = dx.get(r, t);
                        dx.set(r, t, v - 1.0);
                    }
                    accumulate(&mut adj, *logits, dx.scale(scale));
                }
                Op::Sum(a) => {
                    let (r, c) = self.val(a).shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, g.get(0, 0)));
                }
            }
            adj[idx] = Some(g);
        }

        let adjoints = adj
            .into_iter()
            .zip(&self.nodes)
            .map(|(a, n)| a.unwrap_or_else(|| Matrix::zeros(n.value.rows(), n.value.cols())))
            .collect();
        Ok(Gradients { adjoints })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl Ops for Tape {
    type Value = Var;

    fn shape(&self, v: &Var) -> (usize, usize) {
        self.val(v).shape()
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).matmul(self.val(b))?;
        Ok(self.push(Op::MatMul(*a, *b), value))
    }
    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(a).transpose();
        Ok(self.push(Op::Transpose(*a), value))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).add(self.val(b))?;
        Ok(self.push(Op::Add(*a, *b), value))
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = self.val(a).mul(self.val(b))?;
        Ok(self.push(Op::Mul(*a, *b), value))
    }
    fn scale(&mut self, a: &Var, s: f64) -> Result<Var> {
        let value = self.val(a).scale(s);
        Ok(self.push(Op::Scale(*a, s), value))
    }
    fn add_row_bias(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let value = self.val(a).add_row_bias(self.val(bias))?;
        Ok(self.push(Op::AddRowBias(*a, *bias), value))
    }
    fn add_col_bias(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let value = self.val(a).add_col_bias(self.val(bias))?;
        Ok(self.push(Op::AddColBias(*a, *bias), value))
    }
    fn mul_row(&mut self, a: &Var, gain: &Var) -> Result<Var> {
        let value = self.val(a).mul_row(self.val(gain))?;
        Ok(self.push(Op::MulRow(*a, *gain), value))
    }
    fn softmax_rows(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(a).softmax_rows();
        Ok(self.push(Op::Softmax(*a), value))
    }
    fn causal_mask(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(a).apply_causal_mask()?;
        debug_assert!(value.data().iter().all(|&x| x == MASKED || x.is_finite()));
        Ok(self.push(Op::CausalMask(*a), value))
    }
    fn slice_cols(&mut self, a: &Var, start: usize, width: usize) -> Result<Var> {
        let value = self.val(a).slice_cols(start, width)?;
        Ok(self.push(Op::SliceCols(*a, start), value))
    }
    fn slice_rows(&mut self, a: &Var, start: usize, height: usize) -> Result<Var> {
        let value = self.val(a).slice_rows(start, height)?;
        Ok(self.push(Op::SliceRows(*a, start), value))
    }
    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let value = Matrix::concat_cols(&parts.iter().map(|p| self.val(p)).collect::<Vec<_>>())?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }
    fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let value = Matrix::concat_rows(&parts.iter().map(|p| self.val(p)).collect::<Vec<_>>())?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }
    fn layer_norm_rows(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(a).layer_norm_rows();
        Ok(self.push(Op::LayerNorm(*a), value))
    }
    fn gelu(&mut self, a: &Var) -> Result<Var> {
        let value = self.val(a).gelu();
        Ok(self.push(Op::Gelu(*a), value))
    }
    fn gather_rows(&mut self, table: &Var, ids: &[usize]) -> Result<Var> {
        let value = self.val(table).gather_rows(ids)?;
        Ok(self.push(Op::Gather(*table, ids.to_vec()), value))
    }
    fn mean_row_blocks(&mut self, a: &Var, block: usize) -> Result<Var> {
        let value = self.val(a).mean_row_blocks(block)?;
        Ok(self.push(Op::MeanRowBlocks(*a, block), value))
    }
    fn cross_entropy(&mut self, logits: &Var, targets: &[usize]) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.val(logits).cross_entropy(targets)?);
        Ok(self.push(Op::CrossEntropy(*logits, targets.to_vec()), value))
    }
    fn sum(&mut self, a: &Var) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.val(a).sum());
        Ok(self.push(Op::Sum(*a), value))
    }
}

#[cfg(test)]
#[allow(clippy::clone_on_copy)]
mod tests {
    use super::*;
    use crate::ops::Eager;
    use crate::rng::Rng;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::from_fn(3, 2, |r, c| (r + c) as f64));
        let s = t.sum(&w).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(w), &Matrix::filled(3, 2, 1.0));
    }

    #[test]
    fn matmul_adjoint_identity() {
        let mut rng = Rng::new(5);
        let a_val = Matrix::normal(3, 4, &mut rng);
        let b_val = Matrix::normal(4, 2, &mut rng);
        let mut t = Tape::new();
        let a = t.leaf(a_val);
        let b = t.leaf(b_val.clone());
        let c = t.matmul(&a, &b).unwrap();
        let s = t.sum(&c).unwrap();
        let g = t.backward(s).unwrap();
        let expected = Matrix::filled(3, 2, 1.0).matmul(&b_val.transpose()).unwrap();
        assert!(g.wrt(a).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn adjoint_shapes_match_values() {
        let mut rng = Rng::new(9);
        let mut t = Tape::new();
        let a = t.leaf(Matrix::normal(3, 3, &mut rng));
        let unused = t.leaf(Matrix::normal(2, 5, &mut rng));
        let m = t.causal_mask(&a).unwrap();
        let s = t.softmax_rows(&m).unwrap();
        let l = t.sum(&s).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.len(), t.len());
        for i in 0..t.len() {
            assert_eq!(g.adjoints[i].shape(), t.nodes[i].value.shape());
        }
        assert_eq!(g.wrt(unused), &Matrix::zeros(2, 5));
    }

    /// Builds `sum(op(inputs) * probe)` on either backend.
    type Build<O> = fn(&mut O, &[<O as Ops>::Value]) -> Result<<O as Ops>::Value>;

    fn probe_loss<O: Ops>(ops: &mut O, out: &O::Value, probe: &O::Value) -> O::Value {
        let weighted = ops.mul(out, probe).unwrap();
        ops.sum(&weighted).unwrap()
    }

    /// Central differences on the eager path against the tape adjoints.
    fn check_op(
        shapes: &[(usize, usize)],
        tape_build: Build<Tape>,
        eager_build: Build<Eager>,
        seeds: std::ops::Range<u64>,
    ) {
        const EPS: f64 = 1e-5;
        for seed in seeds {
            let mut rng = Rng::new(seed);
            let inputs: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::normal(r, c, &mut rng)).collect();
            let out_shape = eager_build(&mut Eager, &inputs).unwrap().shape();
            let probe = Matrix::normal(out_shape.0, out_shape.1, &mut rng);

            let mut t = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
            let out = tape_build(&mut t, &vars).unwrap();
            let p = t.leaf(probe.clone());
            let loss = probe_loss(&mut t, &out, &p);
            let grads = t.backward(loss).unwrap();

            let eval = |xs: &[Matrix]| -> f64 {
                let mut e = Eager;
                let out = eager_build(&mut e, xs).unwrap();
                probe_loss(&mut e, &out, &probe).get(0, 0)
            };
            for (k, v) in vars.iter().enumerate() {
                let analytic = grads.wrt(*v);
                for idx in 0..inputs[k].data().len() {
                    let mut plus = inputs.clone();
                    plus[k].data_mut()[idx] += EPS;
                    let mut minus = inputs.clone();
                    minus[k].data_mut()[idx] -= EPS;
                    let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
                    let a = analytic.data()[idx];
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                    assert!(rel < 1e-6, "seed {seed} input {k} idx {idx}: {a} vs {numeric}");
                }
            }
        }
    }

    macro_rules! gradcheck {
        ($name:ident, $shapes:expr, |$o:ident, $x:ident| $body:expr) => {
            #[test]
            fn $name() {
                fn tape_build($o: &mut Tape, $x: &[Var]) -> Result<Var> {
                    $body
                }
                fn eager_build($o: &mut Eager, $x: &[Matrix]) -> Result<Matrix> {
                    $body
                }
                check_op(&$shapes, tape_build, eager_build, 0..5);
            }
        };
    }

    gradcheck!(grad_matmul, [(3, 4), (4, 2)], |o, x| o.matmul(&x[0], &x[1]));
    gradcheck!(grad_transpose, [(3, 4)], |o, x| o.transpose(&x[0]));
    gradcheck!(grad_add, [(3, 4), (3, 4)], |o, x| o.add(&x[0], &x[1]));
    gradcheck!(grad_mul, [(3, 4), (3, 4)], |o, x| o.mul(&x[0], &x[1]));
    gradcheck!(grad_scale, [(3, 4)], |o, x| o.scale(&x[0], -0.7));
    gradcheck!(grad_row_bias, [(3, 4), (1, 4)], |o, x| o.add_row_bias(&x[0], &x[1]));
    gradcheck!(grad_col_bias, [(3, 4), (3, 1)], |o, x| o.add_col_bias(&x[0], &x[1]));
    gradcheck!(grad_mul_row, [(3, 4), (1, 4)], |o, x| o.mul_row(&x[0], &x[1]));
    gradcheck!(grad_softmax, [(3, 5)], |o, x| o.softmax_rows(&x[0]));
    gradcheck!(grad_masked_softmax, [(4, 4)], |o, x| {
        let m = o.causal_mask(&x[0])?;
        o.softmax_rows(&m)
    });
    gradcheck!(grad_slice_cols, [(3, 5)], |o, x| o.slice_cols(&x[0], 1, 3));
    gradcheck!(grad_slice_rows, [(5, 3)], |o, x| o.slice_rows(&x[0], 2, 2));
    gradcheck!(grad_concat_cols, [(3, 2), (3, 1)], |o, x| o.concat_cols(&[x[0].clone(), x[1].clone(), x[0].clone()]));
    gradcheck!(grad_concat_rows, [(2, 3), (1, 3)], |o, x| o.concat_rows(&[x[1].clone(), x[0].clone()]));
    gradcheck!(grad_layer_norm, [(3, 6)], |o, x| o.layer_norm_rows(&x[0]));
    gradcheck!(grad_gelu, [(3, 4)], |o, x| o.gelu(&x[0]));
    gradcheck!(grad_gather, [(4, 3)], |o, x| o.gather_rows(&x[0], &[2, 0, 2, 3]));
    gradcheck!(grad_mean_blocks, [(6, 2)], |o, x| o.mean_row_blocks(&x[0], 3));
    gradcheck!(grad_cross_entropy, [(3, 4)], |o, x| o.cross_entropy(&x[0], &[1, 3, 0]));
    gradcheck!(grad_sum, [(3, 4)], |o, x| o.sum(&x[0]));
}
