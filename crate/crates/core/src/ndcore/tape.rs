//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation together with its primal value. Nodes
//! are appended in evaluation order, so parent ids always precede children
//! and [`Tape::backward`] is a single reverse sweep. The tape is rebuilt for
//! every forward pass.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ndcore::matrix::gemm;
use crate::ndcore::{Matrix, SparseMatrix};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Norm floor used by [`Tape::normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Param,
    Const,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Spmm { s_t: Arc<SparseMatrix>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    SoftmaxRows { x: Var, temperature: f64 },
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { x: Var, index: Arc<Vec<usize>> },
    RowScale { x: Var, s: Var },
    ColumnSums(Var),
    RecipFloor { x: Var, floor: f64 },
    Sum(Var),
    FrobeniusSq(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    Contrastive { a: Var, b: Var, temperature: f64, probs: Matrix },
    PairDot { a: Var, b: Var, pairs: Arc<Vec<(usize, usize)>> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Operation log for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, with zeros standing in for "no dependence".
    pub fn get_or_zero(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x), stable on both tails
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(x: &Matrix, temperature: f64) -> Matrix {
    let mut out = x.clone();
    let cols = x.cols();
    if cols == 0 {
        return out;
    }
    for row in out.as_mut_slice().chunks_mut(cols) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(Op::Param, value)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Const, value)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        self.value(a).expect_same_shape(self.value(b), what)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `aᵀ · b`.
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, true, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = gemm(self.value(a), ta, self.value(b), tb)?;
        Ok(self.push(Op::MatMul { a, b, ta, tb }, value))
    }

    /// Constant sparse matrix times a dense node.
    pub fn spmm(&mut self, s: &SparseMatrix, s_t: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        debug_assert_eq!((s.rows(), s.cols()), (s_t.cols(), s_t.rows()));
        let value = s.mul_dense(self.value(x))?;
        Ok(self.push(Op::Spmm { s_t, x }, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let value = self.value(a).map(|x| alpha * x);
        self.push(Op::Scale(a, alpha), value)
    }

    /// Sum of several same-shaped nodes, left to right.
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::contract("add_all of an empty list"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Domain(format!(
                "leaky_relu slope must lie in (0, 1), got {slope}"
            )));
        }
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        Ok(self.push(Op::LeakyRelu(a, slope), value))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(bad) = self.value(a).as_slice().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let value = self.value(a).map(f64::ln);
        Ok(self.push(Op::Log(a), value))
    }

    /// `ln σ(x)` elementwise.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(log_sigmoid);
        self.push(Op::LogSigmoid(a), value)
    }

    /// Row-wise `softmax(x / temperature)`, shifted by the row maximum.
    pub fn softmax_rows(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Domain(format!(
                "softmax temperature must be positive, got {temperature}"
            )));
        }
        let value = softmax_rows(self.value(x), temperature);
        Ok(self.push(Op::SoftmaxRows { x, temperature }, value))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let cols = value.cols();
        if cols > 0 {
            for row in value.as_mut_slice().chunks_mut(cols) {
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
        }
        self.push(Op::LogSoftmaxRows(x), value)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::contract("concat_cols of an empty list"))?;
        if let Some(&p) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(Error::shape(format!(
                "concat_cols: {} rows vs {rows}",
                self.value(p).rows()
            )));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| Error::contract("concat_rows of an empty list"))?;
        if let Some(&p) = parts.iter().find(|&&p| self.value(p).cols() != cols) {
            return Err(Error::shape(format!(
                "concat_rows: {} cols vs {cols}",
                self.value(p).cols()
            )));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).as_slice());
        }
        let rows = data.len() / cols.max(1);
        let value = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start + len > rows {
            return Err(Error::shape(format!(
                "slice_rows {start}..{} of {rows} rows",
                start + len
            )));
        }
        let data = self.value(x).as_slice()[start * cols..(start + len) * cols].to_vec();
        let value = Matrix::from_vec(len, cols, data)?;
        Ok(self.push(Op::SliceRows { x, start }, value))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start + len > cols {
            return Err(Error::shape(format!(
                "slice_cols {start}..{} of {cols} cols",
                start + len
            )));
        }
        let src = self.value(x);
        let value = Matrix::from_fn(rows, len, |i, j| src.get(i, start + j));
        Ok(self.push(Op::SliceCols { x, start }, value))
    }

    /// Output row `i` is row `index[i]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("gather_rows index {bad} of {rows} rows")));
        }
        let src = self.value(x);
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            data.extend_from_slice(src.row(i));
        }
        let value = Matrix::from_vec(index.len(), cols, data)?;
        Ok(self.push(Op::GatherRows { x, index }, value))
    }

    /// Scales row `i` of `x` by `s[i]`, where `s` is a column vector.
    pub fn row_scale(&mut self, x: Var, s: Var) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if self.shape(s) != (rows, 1) {
            return Err(Error::shape(format!(
                "row_scale: {rows}x{cols} by {}x{}",
                self.shape(s).0,
                self.shape(s).1
            )));
        }
        let mut value = self.value(x).clone();
        let sv = self.value(s).as_slice();
        if cols > 0 {
            for (row, &f) in value.as_mut_slice().chunks_mut(cols).zip(sv) {
                for v in row {
                    *v *= f;
                }
            }
        }
        Ok(self.push(Op::RowScale { x, s }, value))
    }

    /// Column sums as a `cols x 1` column vector.
    pub fn column_sums(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let mut sums = vec![0.0; src.cols()];
        for i in 0..src.rows() {
            for (acc, v) in sums.iter_mut().zip(src.row(i)) {
                *acc += v;
            }
        }
        let value = Matrix::column(&sums);
        self.push(Op::ColumnSums(x), value)
    }

    /// `1 / max(x, floor)` elementwise.
    pub fn recip_floor(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| 1.0 / v.max(floor));
        self.push(Op::RecipFloor { x, floor }, value)
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn frobenius_sq(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).frobenius_sq());
        self.push(Op::FrobeniusSq(x), value)
    }

    /// Scales each row to unit Euclidean length (norm floored at
    /// [`NORM_EPS`]).
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let cols = value.cols();
        let mut norms = Vec::with_capacity(value.rows());
        if cols > 0 {
            for row in value.as_mut_slice().chunks_mut(cols) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                for v in row.iter_mut() {
                    *v /= n;
                }
                norms.push(n);
            }
        }
        self.push(Op::NormalizeRows { x, norms }, value)
    }

    /// Mean over anchors `i` of
    /// `-ln( exp(s_ii) / Σ_{j≠i} exp(s_ij) )` with `s = a·bᵀ / temperature`.
    ///
    /// The positive pair is excluded from the denominator. Fewer than two
    /// anchors give a constant zero.
    pub fn contrastive_nll(&mut self, a: Var, b: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) {
            return Err(Error::Domain(format!(
                "contrastive temperature must be positive, got {temperature}"
            )));
        }
        self.same_shape(a, b, "contrastive_nll")?;
        let n = self.value(a).rows();
        if n < 2 {
            return Ok(self.constant(Matrix::scalar(0.0)));
        }
        let mut probs = gemm(self.value(a), false, self.value(b), true)?;
        let mut total = 0.0;
        for (i, row) in probs.as_mut_slice().chunks_mut(n).enumerate() {
            let pos = row[i] / temperature;
            let mut max = f64::NEG_INFINITY;
            for (j, v) in row.iter_mut().enumerate() {
                *v /= temperature;
                if j != i {
                    max = max.max(*v);
                }
            }
            let mut denom = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if j == i {
                    *v = 0.0;
                } else {
                    *v = (*v - max).exp();
                    denom += *v;
                }
            }
            for v in row.iter_mut() {
                *v /= denom;
            }
            total += -pos + max + denom.ln();
        }
        let value = Matrix::scalar(total / n as f64);
        Ok(self.push(
            Op::Contrastive {
                a,
                b,
                temperature,
                probs,
            },
            value,
        ))
    }

    /// Column vector with `out[k] = a[u_k] · b[v_k]` for each `(u_k, v_k)`.
    pub fn pair_dot(&mut self, a: Var, b: Var, pairs: Arc<Vec<(usize, usize)>>) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != cb {
            return Err(Error::shape(format!("pair_dot: widths {ca} vs {cb}")));
        }
        if let Some(&(u, v)) = pairs.iter().find(|&&(u, v)| u >= ra || v >= rb) {
            return Err(Error::shape(format!(
                "pair_dot pair ({u}, {v}) outside {ra} x {rb} rows"
            )));
        }
        let (am, bm) = (self.value(a), self.value(b));
        let out: Vec<f64> = pairs
            .iter()
            .map(|&(u, v)| am.row(u).iter().zip(bm.row(v)).map(|(x, y)| x * y).sum())
            .collect();
        let value = Matrix::column(&out);
        Ok(self.push(Op::PairDot { a, b, pairs }, value))
    }

    /// Gradients of the scalar `loss` with respect to every node it depends
    /// on. Contributions are accumulated in reverse tape order, so repeated
    /// calls return identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            let (r, c) = self.shape(loss);
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        // Only trainable leaves and interior nodes keep gradients.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if matches!(node.op, Op::Const) {
                *slot = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| !matches!(self.nodes[v.0].op, Op::Const);
        match &node.op {
            Op::Param | Op::Const => {}
            Op::MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                if wants(a) {
                    let ga = if ta {
                        gemm(val(b), tb, g, true)?
                    } else {
                        gemm(g, false, val(b), !tb)?
                    };
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(b) {
                    let gb = if tb {
                        gemm(g, true, val(a), ta)?
                    } else {
                        gemm(val(a), !ta, g, false)?
                    };
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Spmm { s_t, x } => {
                if wants(*x) {
                    accumulate(&mut grads[x.0], s_t.mul_dense(g)?);
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(val(*b), |gv, bv| gv * bv)?);
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(val(*a), |gv, av| gv * av)?);
                }
            }
            Op::Scale(a, alpha) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.map(|v| v * alpha));
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))?);
                }
            }
            Op::LeakyRelu(a, slope) => {
                if wants(*a) {
                    let s = *slope;
                    let ga = g.zip_map(val(*a), |gv, x| if x > 0.0 { gv } else { s * gv })?;
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::Exp(a) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(y, |gv, yv| gv * yv)?);
                }
            }
            Op::Log(a) => {
                if wants(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(val(*a), |gv, x| gv / x)?);
                }
            }
            Op::LogSigmoid(a) => {
                if wants(*a) {
                    let ga = g.zip_map(val(*a), |gv, x| gv * sigmoid(-x))?;
                    accumulate(&mut grads[a.0], ga);
                }
            }
            Op::SoftmaxRows { x, temperature } => {
                if wants(*x) {
                    let cols = y.cols();
                    let mut gx = Matrix::zeros(y.rows(), cols);
                    if cols > 0 {
                        for ((dst, yr), gr) in gx
                            .as_mut_slice()
                            .chunks_mut(cols)
                            .zip(y.as_slice().chunks(cols))
                            .zip(g.as_slice().chunks(cols))
                        {
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                                *d = yv * (gv - dot) / temperature;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::LogSoftmaxRows(x) => {
                if wants(*x) {
                    let cols = y.cols();
                    let mut gx = Matrix::zeros(y.rows(), cols);
                    if cols > 0 {
                        for ((dst, yr), gr) in gx
                            .as_mut_slice()
                            .chunks_mut(cols)
                            .zip(y.as_slice().chunks(cols))
                            .zip(g.as_slice().chunks(cols))
                        {
                            let gsum: f64 = gr.iter().sum();
                            for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                                *d = gv - yv.exp() * gsum;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let gp = Matrix::from_fn(g.rows(), w, |i, j| g.get(i, offset + j));
                        accumulate(&mut grads[p.0], gp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let h = val(p).rows();
                    if wants(p) {
                        let data = g.as_slice()[offset * cols..(offset + h) * cols].to_vec();
                        accumulate(&mut grads[p.0], Matrix::from_vec(h, cols, data)?);
                    }
                    offset += h;
                }
            }
            Op::SliceRows { x, start } => {
                if wants(*x) {
                    let (rows, cols) = val(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    gx.as_mut_slice()[start * cols..start * cols + g.len()]
                        .copy_from_slice(g.as_slice());
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let (rows, cols) = val(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        gx.row_mut(i)[*start..start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::GatherRows { x, index } => {
                if wants(*x) {
                    let (rows, cols) = val(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for (k, &i) in index.iter().enumerate() {
                        for (d, s) in gx.row_mut(i).iter_mut().zip(g.row(k)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::RowScale { x, s } => {
                let (rows, cols) = val(*x).shape();
                let sv = val(*s).as_slice();
                if wants(*x) {
                    let mut gx = g.clone();
                    if cols > 0 {
                        for (row, &f) in gx.as_mut_slice().chunks_mut(cols).zip(sv) {
                            for v in row {
                                *v *= f;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
                if wants(*s) {
                    let xv = val(*x);
                    let gs: Vec<f64> = (0..rows)
                        .map(|i| g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum())
                        .collect();
                    accumulate(&mut grads[s.0], Matrix::column(&gs));
                }
            }
            Op::ColumnSums(x) => {
                if wants(*x) {
                    let (rows, cols) = val(*x).shape();
                    let gs = g.as_slice();
                    accumulate(&mut grads[x.0], Matrix::from_fn(rows, cols, |_, j| gs[j]));
                }
            }
            Op::RecipFloor { x, floor } => {
                if wants(*x) {
                    let f = *floor;
                    let gx = g.zip_map(val(*x), |gv, v| if v > f { -gv / (v * v) } else { 0.0 })?;
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let (rows, cols) = val(*x).shape();
                    accumulate(&mut grads[x.0], Matrix::filled(rows, cols, g.item()?));
                }
            }
            Op::FrobeniusSq(x) => {
                if wants(*x) {
                    let gv = g.item()?;
                    accumulate(&mut grads[x.0], val(*x).map(|v| 2.0 * gv * v));
                }
            }
            Op::NormalizeRows { x, norms } => {
                if wants(*x) {
                    let cols = y.cols();
                    let mut gx = Matrix::zeros(y.rows(), cols);
                    if cols > 0 {
                        for (((dst, yr), gr), &n) in gx
                            .as_mut_slice()
                            .chunks_mut(cols)
                            .zip(y.as_slice().chunks(cols))
                            .zip(g.as_slice().chunks(cols))
                            .zip(norms)
                        {
                            if n <= NORM_EPS {
                                for (d, &gv) in dst.iter_mut().zip(gr) {
                                    *d = gv / n;
                                }
                                continue;
                            }
                            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                            for ((d, &yv), &gv) in dst.iter_mut().zip(yr).zip(gr) {
                                *d = (gv - yv * dot) / n;
                            }
                        }
                    }
                    accumulate(&mut grads[x.0], gx);
                }
            }
            Op::Contrastive {
                a,
                b,
                temperature,
                probs,
            } => {
                let n = probs.rows();
                let coef = g.item()? / (n as f64 * temperature);
                // d loss / d s_ij before the 1/temperature factor
                let mut ds = probs.clone();
                for i in 0..n {
                    ds.set(i, i, -1.0);
                }
                ds.scale_in_place(coef);
                if wants(*a) {
                    accumulate(&mut grads[a.0], gemm(&ds, false, val(*b), false)?);
                }
                if wants(*b) {
                    accumulate(&mut grads[b.0], gemm(&ds, true, val(*a), false)?);
                }
            }
            Op::PairDot { a, b, pairs } => {
                let (am, bm) = (val(*a), val(*b));
                let gs = g.as_slice();
                if wants(*a) {
                    let mut ga = Matrix::zeros(am.rows(), am.cols());
                    for (&(u, v), &gk) in pairs.iter().zip(gs) {
                        for (d, s) in ga.row_mut(u).iter_mut().zip(bm.row(v)) {
                            *d += gk * s;
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                if wants(*b) {
                    let mut gb = Matrix::zeros(bm.rows(), bm.cols());
                    for (&(u, v), &gk) in pairs.iter().zip(gs) {
                        for (d, s) in gb.row_mut(v).iter_mut().zip(am.row(u)) {
                            *d += gk * s;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[[3.0]]));
        let l = t.frobenius_sq(w);
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(w).unwrap(), &Matrix::from_rows(&[[6.0]]));
    }

    #[test]
    fn constants_get_zero_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::from_rows(&[[1.0, 2.0]]));
        let w = t.param(Matrix::from_rows(&[[0.5, -1.0]]));
        let p = t.mul(c, w).unwrap();
        let l = t.sum(p);
        let g = t.backward(l).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get_or_zero(c), Matrix::zeros(1, 2));
        assert_eq!(g.get(w).unwrap(), &Matrix::from_rows(&[[1.0, 2.0]]));
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let mut t = Tape::new();
        let w = t.param(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let w = t.param(Matrix::from_rows(&[[1.0, 0.0]]));
        assert!(matches!(t.log(w), Err(Error::Domain(_))));
    }

    #[test]
    fn leaky_relu_values() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[5.0, -10.0, 0.0]]));
        let y = t.leaky_relu(x, 0.2).unwrap();
        assert_eq!(t.value(y), &Matrix::from_rows(&[[5.0, -2.0, 0.0]]));
        assert!(t.leaky_relu(x, 1.5).is_err());
    }

    #[test]
    fn softmax_closed_forms() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::from_rows(&[[0.0, 0.0, 0.0], [7.0, 7.0, 7.0]]));
        let y = t.softmax_rows(x, 0.3).unwrap();
        for v in t.value(y).as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = t.constant(Matrix::from_rows(&[[1.0, 2.0, 3.0]]));
        let y = t.softmax_rows(x, 1.0).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (j, v) in t.value(y).as_slice().iter().enumerate() {
            assert!((v - ((j + 1) as f64).exp() / z).abs() < 1e-12);
        }
        assert!(t.softmax_rows(x, 0.0).is_err());
    }

    #[test]
    fn concat_and_frobenius() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(3, 4));
        let b = t.constant(Matrix::zeros(3, 4));
        let c = t.concat_cols(&[a, b]).unwrap();
        assert_eq!(t.shape(c), (3, 8));
        let f = t.frobenius_sq(a);
        assert_eq!(t.value(f).item().unwrap(), 0.0);
        let m = t.constant(Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
        let f = t.frobenius_sq(m);
        assert_eq!(t.value(f).item().unwrap(), 30.0);
    }

    #[test]
    fn backward_is_repeatable() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3));
        let b = t.param(Matrix::from_fn(4, 2, |i, j| (i * j) as f64 * 0.1 + 0.2));
        let c = t.matmul(a, b).unwrap();
        let d = t.tanh(c);
        let l = t.sum(d);
        let g1 = t.backward(l).unwrap();
        let g2 = t.backward(l).unwrap();
        assert_eq!(g1.get(a), g2.get(a));
        assert_eq!(g1.get(b), g2.get(b));
    }

    #[test]
    fn log_sigmoid_tails_are_finite() {
        assert!((log_sigmoid(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(log_sigmoid(800.0).abs() < 1e-300);
        assert!((log_sigmoid(-800.0) + 800.0).abs() < 1e-9);
    }
}
