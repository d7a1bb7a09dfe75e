//! Reverse-mode tape over dense row-major matrices.
//!
//! Every operation evaluates eagerly and records enough to replay its
//! vector-Jacobian product. Tangent (forward-mode) computations are written
//! with the same operations, so a reverse sweep differentiates through them.

use std::sync::Arc;

use crate::error::{DemError, Result};
use crate::sparse::CsrMatrix;
use crate::tensor::{gemm, pairwise_sum, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A fixed linear map applied to a tape value, with its transpose.
pub trait LinearOperator: Send + Sync {
    /// Output shape for an input of shape `(rows, cols)`.
    fn output_shape(&self, input: (usize, usize)) -> Result<(usize, usize)>;
    fn apply(&self, x: &Tensor, out: &mut Tensor);
    /// `adj_in += A^T adj_out`.
    fn apply_transpose_acc(&self, adj_out: &Tensor, adj_in: &mut Tensor);
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMatMul(Arc<CsrMatrix>, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    OneMinusSquare(Var),
    MulCol(Var, Var),
    Slice(Var, usize),
    ConcatCols(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    Det3(Var),
    Trace3(Var),
    SumSqRows(Var),
    Powf(Var, f64),
    Sum(Var),
    Dot(Var, Var),
    Linear(Arc<dyn LinearOperator>, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.adjoints.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> DemError {
    DemError::Contract(format!("{op}: incompatible shapes {a:?} and {b:?}"))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a value that is not differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Records a leaf whose adjoint is reported by [`Tape::backward`].
    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, tag: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(DemError::NonFiniteLoss { op: tag });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad))
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, tag: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(shape_err(tag, self.shape(a), self.shape(b)))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let out = self.value(a).matmul(self.value(b));
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Product with a fixed sparse matrix.
    pub fn spmatmul(&mut self, s: &Arc<CsrMatrix>, x: Var) -> Result<Var> {
        let (n, f) = self.shape(x);
        if s.n_cols() != n {
            return Err(shape_err("spmatmul", (s.n_rows(), s.n_cols()), (n, f)));
        }
        let mut out = Tensor::zeros(s.n_rows(), f);
        s.mul_dense(self.value(x).data(), f, out.data_mut());
        self.push("spmatmul", out, Op::SpMatMul(Arc::clone(s), x), &[x])
    }

    /// Adds a `1 x m` row to every row of an `n x m` value.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(shape_err("add_row", (n, m), self.shape(row)));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        for chunk in out.data_mut().chunks_exact_mut(m) {
            chunk.iter_mut().zip(r).for_each(|(o, b)| *o += b);
        }
        self.push("add_row", out, Op::AddRow(a, row), &[a, row])
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip(a, b, |p, q| p + q);
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip(a, b, |p, q| p - q);
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip(a, b, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a), &[a])
    }

    /// `1 - a^2` elementwise, the tanh derivative expressed through its output.
    pub fn one_minus_square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| 1.0 - v * v);
        self.push("one_minus_square", out, Op::OneMinusSquare(a), &[a])
    }

    /// Scales row `r` of an `n x m` value by entry `r` of an `n x 1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(shape_err("mul_col", (n, m), self.shape(col)));
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data();
        for (chunk, &s) in out.data_mut().chunks_exact_mut(m.max(1)).zip(c) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        self.push("mul_col", out, Op::MulCol(a, col), &[a, col])
    }

    /// Contiguous block of a flat value, reshaped to `rows x cols`.
    pub fn slice(&mut self, src: Var, offset: usize, rows: usize, cols: usize) -> Result<Var> {
        let len = rows * cols;
        let data = self.value(src).data();
        if offset + len > data.len() {
            return Err(DemError::Contract(format!(
                "slice [{offset}, {}) exceeds length {}",
                offset + len,
                data.len()
            )));
        }
        let out = Tensor::from_vec(rows, cols, data[offset..offset + len].to_vec());
        self.push("slice", out, Op::Slice(src, offset), &[src])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(DemError::Contract("concat_cols: row counts differ".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(rows, total);
        for r in 0..rows {
            let mut c0 = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                out.row_mut(r)[c0..c0 + w].copy_from_slice(self.value(p).row(r));
                c0 += w;
            }
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Column gather: output column `j` is input column `idx[j]`.
    pub fn select_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.shape(a);
        if idx.iter().any(|&c| c >= m) {
            return Err(DemError::Contract(format!("select_cols: index out of range for width {m}")));
        }
        let src = self.value(a);
        let out = Tensor::from_fn(n, idx.len(), |r, j| src.get(r, idx[j]));
        self.push("select_cols", out, Op::SelectCols(a, idx.to_vec()), &[a])
    }

    fn require_width(&self, tag: &str, a: Var, width: usize) -> Result<usize> {
        let (n, m) = self.shape(a);
        if m != width {
            return Err(DemError::Contract(format!("{tag}: expected {width} columns, got {m}")));
        }
        Ok(n)
    }

    /// Determinant of each row read as a row-major 3x3 matrix.
    pub fn det3(&mut self, a: Var) -> Result<Var> {
        let n = self.require_width("det3", a, 9)?;
        let src = self.value(a);
        let out = Tensor::from_fn(n, 1, |r, _| det3(src.row(r)));
        self.push("det3", out, Op::Det3(a), &[a])
    }

    /// Trace of each row read as a row-major 3x3 matrix.
    pub fn trace3(&mut self, a: Var) -> Result<Var> {
        let n = self.require_width("trace3", a, 9)?;
        let src = self.value(a);
        let out = Tensor::from_fn(n, 1, |r, _| {
            let m = src.row(r);
            m[0] + m[4] + m[8]
        });
        self.push("trace3", out, Op::Trace3(a), &[a])
    }

    /// Squared Frobenius norm of every row.
    pub fn sum_sq_rows(&mut self, a: Var) -> Result<Var> {
        let (n, _) = self.shape(a);
        let src = self.value(a);
        let out = Tensor::from_fn(n, 1, |r, _| src.row(r).iter().map(|v| v * v).sum());
        self.push("sum_sq_rows", out, Op::SumSqRows(a), &[a])
    }

    /// `a^p` for strictly positive entries.
    pub fn powf(&mut self, a: Var, p: f64) -> Result<Var> {
        let src = self.value(a);
        if src.data().iter().any(|&v| !(v > 0.0)) {
            return Err(DemError::NonFiniteLoss { op: "powf" });
        }
        let out = src.map(|v| v.powf(p));
        self.push("powf", out, Op::Powf(a, p), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(pairwise_sum(self.value(a).data()));
        self.push("sum", out, Op::Sum(a), &[a])
    }

    /// `sum(a .* b)` as a `1 x 1` value.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let prod = self.zip(a, b, |p, q| p * q);
        let out = Tensor::scalar(pairwise_sum(prod.data()));
        self.push("dot", out, Op::Dot(a, b), &[a, b])
    }

    pub fn linear(&mut self, op: &Arc<dyn LinearOperator>, x: Var) -> Result<Var> {
        let (r, c) = op.output_shape(self.shape(x))?;
        let mut out = Tensor::zeros(r, c);
        op.apply(self.value(x), &mut out);
        self.push("linear", out, Op::Linear(Arc::clone(op), x), &[x])
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != (1, 1) {
            return Err(DemError::Contract("backward requires a 1x1 output".into()));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Gradients { adjoints: adj })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].needs_grad;
        let val = |v: Var| &nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k) = av.shape();
                let n = bv.cols();
                if wants(*a) {
                    // dA += dC B^T
                    gemm(
                        m,
                        n,
                        k,
                        1.0,
                        (g.data(), n as isize, 1),
                        (bv.data(), 1, n as isize),
                        1.0,
                        slot(adj, nodes, *a).data_mut(),
                    );
                }
                if wants(*b) {
                    // dB += A^T dC
                    gemm(
                        k,
                        m,
                        n,
                        1.0,
                        (av.data(), 1, k as isize),
                        (g.data(), n as isize, 1),
                        1.0,
                        slot(adj, nodes, *b).data_mut(),
                    );
                }
            }
            Op::SpMatMul(s, x) => {
                if wants(*x) {
                    s.mul_dense_transpose_acc(g.data(), g.cols(), slot(adj, nodes, *x).data_mut());
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    axpy(slot(adj, nodes, *a), 1.0, g);
                }
                if wants(*row) {
                    let m = g.cols();
                    let dst = slot(adj, nodes, *row).data_mut();
                    for chunk in g.data().chunks_exact(m) {
                        dst.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    axpy(slot(adj, nodes, *a), 1.0, g);
                }
                if wants(*b) {
                    axpy(slot(adj, nodes, *b), 1.0, g);
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(slot(adj, nodes, *a), 1.0, g);
                }
                if wants(*b) {
                    axpy(slot(adj, nodes, *b), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let bv = val(*b);
                    acc_zip(slot(adj, nodes, *a), g, bv, |gi, bi| gi * bi);
                }
                if wants(*b) {
                    let av = val(*a);
                    acc_zip(slot(adj, nodes, *b), g, av, |gi, ai| gi * ai);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    axpy(slot(adj, nodes, *a), *s, g);
                }
            }
            Op::AddScalar(a) => {
                if wants(*a) {
                    axpy(slot(adj, nodes, *a), 1.0, g);
                }
            }
            Op::Tanh(a) => {
                if wants(*a) {
                    acc_zip(slot(adj, nodes, *a), g, &node.value, |gi, y| gi * (1.0 - y * y));
                }
            }
            Op::OneMinusSquare(a) => {
                if wants(*a) {
                    let av = val(*a);
                    acc_zip(slot(adj, nodes, *a), g, av, |gi, x| -2.0 * gi * x);
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (val(*a), val(*col));
                let m = av.cols().max(1);
                if wants(*a) {
                    let dst = slot(adj, nodes, *a).data_mut();
                    for ((d, gr), &s) in dst.chunks_exact_mut(m).zip(g.data().chunks_exact(m)).zip(cv.data()) {
                        d.iter_mut().zip(gr).for_each(|(d, gv)| *d += gv * s);
                    }
                }
                if wants(*col) {
                    let dst = slot(adj, nodes, *col).data_mut();
                    for ((d, gr), ar) in dst.iter_mut().zip(g.data().chunks_exact(m)).zip(av.data().chunks_exact(m)) {
                        *d += gr.iter().zip(ar).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            }
            Op::Slice(src, offset) => {
                if wants(*src) {
                    let dst = &mut slot(adj, nodes, *src).data_mut()[*offset..*offset + g.len()];
                    dst.iter_mut().zip(g.data()).for_each(|(d, v)| *d += v);
                }
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let dst = slot(adj, nodes, p);
                        for r in 0..g.rows() {
                            dst.row_mut(r)
                                .iter_mut()
                                .zip(&g.row(r)[c0..c0 + w])
                                .for_each(|(d, v)| *d += v);
                        }
                    }
                    c0 += w;
                }
            }
            Op::SelectCols(a, idx) => {
                if wants(*a) {
                    let dst = slot(adj, nodes, *a);
                    for r in 0..g.rows() {
                        let gr = g.row(r);
                        let dr = dst.row_mut(r);
                        for (j, &c) in idx.iter().enumerate() {
                            dr[c] += gr[j];
                        }
                    }
                }
            }
            Op::Det3(a) => {
                if wants(*a) {
                    let av = val(*a);
                    let dst = slot(adj, nodes, *a);
                    for r in 0..g.rows() {
                        let cof = cofactor3(av.row(r));
                        let gr = g.data()[r];
                        dst.row_mut(r).iter_mut().zip(cof).for_each(|(d, c)| *d += gr * c);
                    }
                }
            }
            Op::Trace3(a) => {
                if wants(*a) {
                    let dst = slot(adj, nodes, *a);
                    for r in 0..g.rows() {
                        let gr = g.data()[r];
                        let d = dst.row_mut(r);
                        d[0] += gr;
                        d[4] += gr;
                        d[8] += gr;
                    }
                }
            }
            Op::SumSqRows(a) => {
                if wants(*a) {
                    let av = val(*a);
                    let dst = slot(adj, nodes, *a);
                    for r in 0..g.rows() {
                        let gr = 2.0 * g.data()[r];
                        dst.row_mut(r).iter_mut().zip(av.row(r)).for_each(|(d, x)| *d += gr * x);
                    }
                }
            }
            Op::Powf(a, p) => {
                if wants(*a) {
                    let av = val(*a);
                    let dst = slot(adj, nodes, *a).data_mut();
                    for ((d, gi), (x, y)) in dst.iter_mut().zip(g.data()).zip(av.data().iter().zip(node.value.data())) {
                        *d += gi * p * y / x;
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let s = g.item();
                    slot(adj, nodes, *a).data_mut().iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Dot(a, b) => {
                let s = g.item();
                if wants(*a) {
                    let bv = val(*b);
                    slot(adj, nodes, *a).data_mut().iter_mut().zip(bv.data()).for_each(|(d, x)| *d += s * x);
                }
                if wants(*b) {
                    let av = val(*a);
                    slot(adj, nodes, *b).data_mut().iter_mut().zip(av.data()).for_each(|(d, x)| *d += s * x);
                }
            }
            Op::Linear(op, x) => {
                if wants(*x) {
                    op.apply_transpose_acc(g, slot(adj, nodes, *x));
                }
            }
        }
    }
}

fn slot<'a>(adj: &'a mut [Option<Tensor>], nodes: &[Node], v: Var) -> &'a mut Tensor {
    let (r, c) = nodes[v.0].value.shape();
    adj[v.0].get_or_insert_with(|| Tensor::zeros(r, c))
}

fn axpy(dst: &mut Tensor, s: f64, g: &Tensor) {
    dst.data_mut().iter_mut().zip(g.data()).for_each(|(d, v)| *d += s * v);
}

fn acc_zip(dst: &mut Tensor, g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) {
    dst.data_mut()
        .iter_mut()
        .zip(g.data().iter().zip(other.data()))
        .for_each(|(d, (&gi, &o))| *d += f(gi, o));
}

#[inline]
pub(crate) fn det3(m: &[f64]) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// `d det / d m_ij`, row-major.
#[inline]
fn cofactor3(m: &[f64]) -> [f64; 9] {
    [
        m[4] * m[8] - m[5] * m[7],
        m[5] * m[6] - m[3] * m[8],
        m[3] * m[7] - m[4] * m[6],
        m[2] * m[7] - m[1] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[1] * m[5] - m[2] * m[4],
        m[2] * m[3] - m[0] * m[5],
        m[0] * m[4] - m[1] * m[3],
    ]
}
