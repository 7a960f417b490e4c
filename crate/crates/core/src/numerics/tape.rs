//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every operation evaluates eagerly, records its inputs on the tape and
//! returns a [`Var`] handle. [`Tape::backward`] walks the record in reverse
//! and returns adjoints for every node that the loss depends on.

use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{matmul_nt_into, matmul_tn_into, Matrix};
use super::params::ParamId;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    SegmentSoftmax(Var, Rc<[usize]>),
    Sigmoid(Var),
    Relu(Var),
    LogClamped(Var, f64),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Rc<[usize]>),
    ScatterSum(Var, Rc<[usize]>),
    Column(Var, usize),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Transpose(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Adjoint of `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    /// Parameters bound on the tape together with their adjoints.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, Option<&Matrix>)> + '_ {
        self.params.iter().map(|&(id, v)| (id, self.get(v)))
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::NotRecorded);
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    fn push(&mut self, value: Matrix, op: Op, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// A constant input (no parameter binding).
    pub fn constant(&mut self, value: Matrix) -> Result<Var> {
        self.push(value, Op::Leaf, "constant")
    }

    /// A trainable input tied to a parameter slot.
    pub fn param(&mut self, id: ParamId, value: Matrix) -> Result<Var> {
        let v = self.push(value, Op::Leaf, "param")?;
        self.params.push((id, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check(a)?;
        self.check(row)?;
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Scales row `i` of `a` by `s[i]` where `s` is `n×1`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        let (av, sv) = (self.value(a), self.value(s));
        if sv.cols() != 1 || sv.rows() != av.rows() {
            return Err(shape_err("mul_col", av, sv));
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            let f = sv.data()[r];
            for o in out.row_mut(r) {
                *o *= f;
            }
        }
        self.push(out, Op::MulCol(a, s), "mul_col")
    }

    /// Multiplies every entry of `a` by the `1×1` value `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.check(a)?;
        self.check(s)?;
        let (av, sv) = (self.value(a), self.value(s));
        if sv.shape() != (1, 1) {
            return Err(shape_err("mul_scalar", av, sv));
        }
        let f = sv.item();
        let out = av.map(|x| x * f);
        self.push(out, Op::MulScalar(a, s), "mul_scalar")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor), "scale")
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddConst(a), "add_const")
    }

    /// `[a || b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(shape_err("concat_cols", av, bv));
        }
        let cols = av.cols() + bv.cols();
        let mut out = Matrix::zeros(av.rows(), cols);
        for r in 0..av.rows() {
            let row = out.row_mut(r);
            row[..av.cols()].copy_from_slice(av.row(r));
            row[av.cols()..].copy_from_slice(bv.row(r));
        }
        self.push(out, Op::ConcatCols(a, b), "concat_cols")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a), "softmax_rows")
    }

    /// Softmax over the rows that share a segment id, independently for
    /// every column. `segment[i]` is the segment of row `i`.
    pub fn segment_softmax(&mut self, a: Var, segment: Rc<[usize]>) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if segment.len() != av.rows() {
            return Err(Error::Shape {
                op: "segment_softmax",
                left: av.shape(),
                right: (segment.len(), 1),
            });
        }
        let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
        let cols = av.cols();
        let mut maxes = Matrix::filled(n_seg, cols, f64::NEG_INFINITY);
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                let v = av.get(r, c);
                if v > maxes.get(s, c) {
                    maxes.set(s, c, v);
                }
            }
        }
        let mut out = Matrix::zeros(av.rows(), cols);
        let mut sums = Matrix::zeros(n_seg, cols);
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                let e = (av.get(r, c) - maxes.get(s, c)).exp();
                out.set(r, c, e);
                sums.set(s, c, sums.get(s, c) + e);
            }
        }
        for (r, &s) in segment.iter().enumerate() {
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / sums.get(s, c));
            }
        }
        self.push(out, Op::SegmentSoftmax(a, segment), "segment_softmax")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|x| x.max(eps).ln());
        self.push(out, Op::LogClamped(a, eps), "log")
    }

    /// Per-row layer normalisation with learnable `1×c` scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        self.check(gamma)?;
        self.check(beta)?;
        let xv = self.value(x);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        if gv.shape() != (1, xv.cols()) {
            return Err(shape_err("layer_norm", xv, gv));
        }
        if bv.shape() != (1, xv.cols()) {
            return Err(shape_err("layer_norm", xv, bv));
        }
        let cols = xv.cols() as f64;
        let mut xhat = Matrix::zeros(xv.rows(), xv.cols());
        let mut inv_std = Vec::with_capacity(xv.rows());
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        for r in 0..xv.rows() {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..xv.cols() {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * gv.data()[c] + bv.data()[c]);
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            "layer_norm",
        )
    }

    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).select_rows(&index)?;
        self.push(out, Op::GatherRows(a, index), "gather_rows")
    }

    /// Sums row `i` of `a` into output row `index[i]`; the output has
    /// `out_rows` rows. Rows are accumulated in input order.
    pub fn scatter_sum(&mut self, a: Var, index: Rc<[usize]>, out_rows: usize) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if index.len() != av.rows() {
            return Err(Error::Shape {
                op: "scatter_sum",
                left: av.shape(),
                right: (index.len(), 1),
            });
        }
        let out = scatter_sum_rows(av, &index, out_rows)?;
        self.push(out, Op::ScatterSum(a, index), "scatter_sum")
    }

    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if j >= av.cols() {
            return Err(Error::OutOfRange {
                what: "matrix columns",
                index: j,
                size: av.cols(),
            });
        }
        let col: Vec<f64> = (0..av.rows()).map(|r| av.get(r, j)).collect();
        self.push(Matrix::column_vector(&col), Op::Column(a, j), "column")
    }

    /// Row sums as an `n×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        let col: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        self.push(Matrix::column_vector(&col), Op::SumCols(a), "sum_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let s = self.value(a).sum();
        self.push(Matrix::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if av.is_empty() {
            return Err(Error::Invalid("mean of an empty matrix".into()));
        }
        let s = av.sum() / av.len() as f64;
        self.push(Matrix::scalar(s), Op::Mean(a), "mean")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Reverse sweep from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: lv.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            params: self.params.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.index].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                matmul_nt_into(g, bv, &mut ga);
                accumulate(grads, *a, ga);
                let mut gb = Matrix::zeros(bv.rows(), bv.cols());
                matmul_tn_into(av, g, &mut gb);
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(grads, *row, gr);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                accumulate(grads, *a, g.zip_map(bv, "mul", |x, y| x * y)?);
                accumulate(grads, *b, g.zip_map(av, "mul", |x, y| x * y)?);
            }
            Op::MulCol(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let mut ga = g.clone();
                let mut gs = Matrix::zeros(sv.rows(), 1);
                for r in 0..g.rows() {
                    let f = sv.data()[r];
                    let mut acc = 0.0;
                    for (gx, ax) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                        acc += *gx * ax;
                        *gx *= f;
                    }
                    gs.data_mut()[r] = acc;
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *s, gs);
            }
            Op::MulScalar(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let f = sv.item();
                accumulate(grads, *a, g.map(|x| x * f));
                let gs: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                accumulate(grads, *s, Matrix::scalar(gs));
            }
            Op::Scale(a, f) => accumulate(grads, *a, g.map(|x| x * f)),
            Op::AddConst(a) => accumulate(grads, *a, g.clone()),
            Op::ConcatCols(a, b) => {
                let ac = val(*a).cols();
                let bc = val(*b).cols();
                let mut ga = Matrix::zeros(g.rows(), ac);
                let mut gb = Matrix::zeros(g.rows(), bc);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, w)| x * w).sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, segment) => {
                let y = &node.value;
                let n_seg = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = Matrix::zeros(n_seg, y.cols());
                for (r, &s) in segment.iter().enumerate() {
                    for c in 0..y.cols() {
                        dots.set(s, c, dots.get(s, c) + g.get(r, c) * y.get(r, c));
                    }
                }
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for (r, &s) in segment.iter().enumerate() {
                    for c in 0..y.cols() {
                        ga.set(r, c, y.get(r, c) * (g.get(r, c) - dots.get(s, c)));
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(grads, *a, g.zip_map(y, "sigmoid", |x, s| x * s * (1.0 - s))?);
            }
            Op::Relu(a) => {
                let av = val(*a);
                accumulate(grads, *a, g.zip_map(av, "relu", |x, v| if v > 0.0 { x } else { 0.0 })?);
            }
            Op::LogClamped(a, eps) => {
                let av = val(*a);
                let eps = *eps;
                accumulate(
                    grads,
                    *a,
                    g.zip_map(av, "log", |x, v| if v > eps { x / v } else { 0.0 })?,
                );
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = val(*gamma);
                let cols = xhat.cols();
                let n = cols as f64;
                let mut gx = Matrix::zeros(xhat.rows(), cols);
                let mut ggamma = Matrix::zeros(1, cols);
                let mut gbeta = Matrix::zeros(1, cols);
                for r in 0..xhat.rows() {
                    let grow = g.row(r);
                    let hrow = xhat.row(r);
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for c in 0..cols {
                        let d = grow[c] * gv.data()[c];
                        mean_d += d;
                        mean_dh += d * hrow[c];
                        ggamma.data_mut()[c] += grow[c] * hrow[c];
                        gbeta.data_mut()[c] += grow[c];
                    }
                    mean_d /= n;
                    mean_dh /= n;
                    let is = inv_std[r];
                    for c in 0..cols {
                        let d = grow[c] * gv.data()[c];
                        gx.set(r, c, is * (d - mean_d - hrow[c] * mean_dh));
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, ggamma);
                accumulate(grads, *beta, gbeta);
            }
            Op::GatherRows(a, index) => {
                let rows = val(*a).rows();
                accumulate(grads, *a, scatter_sum_rows(g, index, rows)?);
            }
            Op::ScatterSum(a, index) => {
                accumulate(grads, *a, g.select_rows(index)?);
            }
            Op::Column(a, j) => {
                let av = val(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    ga.set(r, *j, g.data()[r]);
                }
                accumulate(grads, *a, ga);
            }
            Op::SumCols(a) => {
                let av = val(*a);
                let mut ga = Matrix::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let f = g.data()[r];
                    ga.row_mut(r).iter_mut().for_each(|x| *x = f);
                }
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let av = val(*a);
                accumulate(grads, *a, Matrix::filled(av.rows(), av.cols(), g.item()));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let f = g.item() / av.len() as f64;
                accumulate(grads, *a, Matrix::filled(av.rows(), av.cols(), f));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.index] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums row `i` of `a` into output row `index[i]`.
///
/// The addends of each output cell are summed in ascending value order, so
/// the result depends only on the multiset of contributions and not on the
/// order of `index`. Relabelled or re-ordered edge lists therefore produce
/// bit-identical aggregates.
pub(crate) fn scatter_sum_rows(a: &Matrix, index: &[usize], out_rows: usize) -> Result<Matrix> {
    let mut degree = vec![0usize; out_rows + 1];
    for &dst in index {
        if dst >= out_rows {
            return Err(Error::OutOfRange {
                what: "scatter target",
                index: dst,
                size: out_rows,
            });
        }
        degree[dst + 1] += 1;
    }
    for i in 0..out_rows {
        degree[i + 1] += degree[i];
    }
    let start = degree;
    let mut fill = start.clone();
    let mut order = vec![0usize; index.len()];
    for (r, &dst) in index.iter().enumerate() {
        order[fill[dst]] = r;
        fill[dst] += 1;
    }
    let cols = a.cols();
    let mut out = Matrix::zeros(out_rows, cols);
    let mut buf = Vec::new();
    for dst in 0..out_rows {
        let rows = &order[start[dst]..start[dst + 1]];
        let target = out.row_mut(dst);
        match rows.len() {
            0 => {}
            1 => target.copy_from_slice(a.row(rows[0])),
            // Two-term sums are exactly commutative.
            2 => {
                for ((o, x), y) in target.iter_mut().zip(a.row(rows[0])).zip(a.row(rows[1])) {
                    *o = x + y;
                }
            }
            _ => {
                for (c, o) in target.iter_mut().enumerate() {
                    buf.clear();
                    buf.extend(rows.iter().map(|&r| a.data()[r * cols + c]));
                    buf.sort_unstable_by(f64::total_cmp);
                    *o = buf.iter().sum();
                }
            }
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
