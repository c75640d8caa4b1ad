//! Reverse-mode differentiation over a recorded tape.
//!
//! Every forward operation appends a node holding its value and the
//! inputs it was computed from. [`Tape::backward`] walks the nodes in
//! reverse and accumulates adjoints into every node that (transitively)
//! depends on a parameter. The vocabulary is fixed: exactly the matrix,
//! per-edge and loss operations the network needs.
//!
//! All reductions run sequentially in a fixed order, so gradients are
//! bitwise reproducible.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::matrix::{dot, matmul_acc, matmul_t_acc, t_matmul_acc};
use crate::graph::Graph;
use crate::math;
use crate::{Error, Matrix, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kind of a tape node, for structural inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Leaf,
    MatMul,
    MatMulT,
    Add,
    AddRow,
    Mul,
    Scale,
    LinComb,
    ConcatCols,
    SliceCols,
    LeakyRelu,
    Tanh,
    Relu,
    Elu,
    Dropout,
    LayerNorm,
    GatherRows,
    ScatterAddRows,
    SegmentSoftmax,
    EdgeSpmm,
    DiffusionStep,
    Sum,
    SoftmaxKl,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LinComb(f64, Var, f64, Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Relu(Var),
    Elu(Var),
    Dropout(Var, Matrix),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        normed: Matrix,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    SegmentSoftmax(Var, Arc<[usize]>),
    EdgeSpmm {
        att: Var,
        h: Var,
        graph: Arc<Graph>,
    },
    DiffusionStep {
        att: Var,
        z: Var,
        z0: Var,
        alpha: f64,
        graph: Arc<Graph>,
    },
    Sum(Var),
    SoftmaxKl {
        logits: Var,
        rows: Arc<[usize]>,
        targets: Matrix,
        probs: Matrix,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulT(..) => OpKind::MatMulT,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::LinComb(..) => OpKind::LinComb,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::Elu(..) => OpKind::Elu,
            Op::Dropout(..) => OpKind::Dropout,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::ScatterAddRows(..) => OpKind::ScatterAddRows,
            Op::SegmentSoftmax(..) => OpKind::SegmentSoftmax,
            Op::EdgeSpmm { .. } => OpKind::EdgeSpmm,
            Op::DiffusionStep { .. } => OpKind::DiffusionStep,
            Op::Sum(..) => OpKind::Sum,
            Op::SoftmaxKl { .. } => OpKind::SoftmaxKl,
        }
    }
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Computation tape. One tape records one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
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

    /// Trainable leaf; gradients are kept after [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Operation kinds in recording order.
    pub fn op_kinds(&self) -> impl Iterator<Item = OpKind> + '_ {
        self.nodes.iter().map(|n| n.op.kind())
    }

    pub fn count(&self, kind: OpKind) -> usize {
        self.op_kinds().filter(|k| *k == kind).count()
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var], name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        self.push(out, Op::MatMulT(a, b), &[a, b], "matmul_t")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).zip_with(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds a `1 x c` row to every row of `x` (bias).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        if self.shape(row) != (1, c) {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: (r, c),
                rhs: self.shape(row),
            });
        }
        let mut out = self.value(x).clone();
        let b = self.value(row).as_slice();
        for i in 0..r {
            for (o, bj) in out.row_mut(i).iter_mut().zip(b) {
                *o += bj;
            }
        }
        self.push(out, Op::AddRow(x, row), &[x, row], "add_row")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).zip_with(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s), &[x], "scale")
    }

    /// `a * x + b * y`
    pub fn lin_comb(&mut self, a: f64, x: Var, b: f64, y: Var) -> Result<Var> {
        self.same_shape(x, y, "lin_comb")?;
        let out = self.value(x).zip_with(self.value(y), |u, v| a * u + b * v);
        self.push(out, Op::LinComb(a, x, b, y), &[x, y], "lin_comb")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("concat_cols input"));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(first),
                    rhs: s,
                });
            }
            cols += s.1;
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let w = v.cols();
            for r in 0..rows {
                out.row_mut(r)[offset..offset + w].copy_from_slice(v.row(r));
            }
            offset += w;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts, "concat_cols")
    }

    /// Columns `start..start + len` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        if start + len > cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: (rows, cols),
                rhs: (rows, start + len),
            });
        }
        let v = self.value(x);
        let out = Matrix::from_fn(rows, len, |r, c| v[(r, start + c)]);
        self.push(out, Op::SliceCols(x, start), &[x], "slice_cols")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(x, slope), &[x], "leaky_relu")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(math::tanh);
        self.push(out, Op::Tanh(x), &[x], "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x), &[x], "relu")
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { math::expm1(v) });
        self.push(out, Op::Elu(x), &[x], "elu")
    }

    /// Inverted dropout: in training mode each entry is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`.
    /// Outside training (or with `p == 0`) returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(alloc::format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.shape(x);
        let keep = 1.0 / (1.0 - p);
        let mask = Matrix::from_fn(r, c, |_, _| if rng.gen::<f64>() < p { 0.0 } else { keep });
        let out = self.value(x).zip_with(&mask, |a, m| a * m);
        self.push(out, Op::Dropout(x, mask), &[x], "dropout")
    }

    /// Row-wise layer normalization with per-feature affine `gamma`, `beta` (`1 x c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.shape(x);
        for p in [gamma, beta] {
            if self.shape(p) != (1, cols) {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: (rows, cols),
                    rhs: self.shape(p),
                });
            }
        }
        let xv = self.value(x);
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut normed = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std.push(is);
            let nrow = normed.row_mut(r);
            for (n, v) in nrow.iter_mut().zip(row) {
                *n = (v - mean) * is;
            }
            let nrow = normed.row(r).to_vec();
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = g[j] * nrow[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            },
            &[x, gamma, beta],
            "layer_norm",
        )
    }

    /// `out[i] = x[index[i]]`
    pub fn gather_rows(&mut self, x: Var, index: &Arc<[usize]>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::OutOfRange(alloc::format!("gather_rows index {bad} >= {rows}")));
        }
        let mut out = Matrix::zeros(index.len(), cols);
        for (o, &i) in index.iter().enumerate() {
            out.row_mut(o).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::GatherRows(x, index.clone()), &[x], "gather_rows")
    }

    /// `out[index[i]] += x[i]` into `out_rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, index: &Arc<[usize]>, out_rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if index.len() != xv.rows() {
            return Err(Error::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: xv.shape(),
                rhs: (index.len(), 1),
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::OutOfRange(alloc::format!(
                "scatter_add_rows index {bad} >= {out_rows}"
            )));
        }
        let mut out = Matrix::zeros(out_rows, xv.cols());
        for (i, &t) in index.iter().enumerate() {
            for (o, v) in out.row_mut(t).iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::ScatterAddRows(x, index.clone()), &[x], "scatter_add_rows")
    }

    /// Softmax of an `E x 1` score vector within each segment
    /// `offsets[i]..offsets[i + 1]`, with max-subtraction.
    pub fn segment_softmax(&mut self, scores: Var, offsets: &Arc<[usize]>) -> Result<Var> {
        let s = self.value(scores);
        if s.cols() != 1 || offsets.last().copied() != Some(s.rows()) {
            return Err(Error::ShapeMismatch {
                op: "segment_softmax",
                lhs: s.shape(),
                rhs: (offsets.last().copied().unwrap_or(0), 1),
            });
        }
        let mut out = Matrix::zeros(s.rows(), 1);
        let sv = s.as_slice();
        let ov = out.as_mut_slice();
        for w in offsets.windows(2) {
            let seg = w[0]..w[1];
            if seg.is_empty() {
                continue;
            }
            let max = sv[seg.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in seg.clone() {
                let v = math::exp(sv[e] - max);
                ov[e] = v;
                total += v;
            }
            for e in seg {
                ov[e] /= total;
            }
        }
        self.push(
            out,
            Op::SegmentSoftmax(scores, offsets.clone()),
            &[scores],
            "segment_softmax",
        )
    }

    /// Sparse product with the edge-weighted adjacency:
    /// `out[i] = sum over edges (j -> i) of att[e] * h[j]`.
    pub fn edge_spmm(&mut self, att: Var, h: Var, graph: &Arc<Graph>) -> Result<Var> {
        self.check_edge_operands(att, h, graph, "edge_spmm")?;
        let mut out = Matrix::zeros(graph.num_nodes(), self.shape(h).1);
        spmm_acc(self.value(att).as_slice(), self.value(h), graph, 1.0, &mut out);
        self.push(
            out,
            Op::EdgeSpmm {
                att,
                h,
                graph: graph.clone(),
            },
            &[att, h],
            "edge_spmm",
        )
    }

    /// One step of the attention-diffusion recursion:
    /// `(1 - alpha) * A z + alpha * z0`, with `A` given by per-edge weights.
    pub fn diffusion_step(&mut self, att: Var, z: Var, z0: Var, alpha: f64, graph: &Arc<Graph>) -> Result<Var> {
        self.check_edge_operands(att, z, graph, "diffusion_step")?;
        self.same_shape(z, z0, "diffusion_step")?;
        let mut out = self.value(z0).scale(alpha);
        spmm_acc(self.value(att).as_slice(), self.value(z), graph, 1.0 - alpha, &mut out);
        self.push(
            out,
            Op::DiffusionStep {
                att,
                z,
                z0,
                alpha,
                graph: graph.clone(),
            },
            &[att, z, z0],
            "diffusion_step",
        )
    }

    fn check_edge_operands(&self, att: Var, h: Var, graph: &Graph, op: &'static str) -> Result<()> {
        if self.shape(att) != (graph.num_edges(), 1) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(att),
                rhs: (graph.num_edges(), 1),
            });
        }
        if self.shape(h).0 != graph.num_nodes() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape(h),
                rhs: (graph.num_nodes(), self.shape(h).1),
            });
        }
        Ok(())
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Matrix::filled(1, 1, self.value(x).sum());
        self.push(out, Op::Sum(x), &[x], "sum")
    }

    /// Mean over the selected logit rows of `KL(target_r || softmax(logits[rows[r]]))`.
    ///
    /// `targets` is `rows.len() x classes`, each row a probability
    /// distribution. With one-hot targets this is the cross-entropy.
    pub fn softmax_kl(&mut self, logits: Var, rows: &Arc<[usize]>, targets: Matrix) -> Result<Var> {
        let lv = self.value(logits);
        if rows.is_empty() {
            return Err(Error::Empty("softmax_kl row selection"));
        }
        if targets.shape() != (rows.len(), lv.cols()) {
            return Err(Error::ShapeMismatch {
                op: "softmax_kl",
                lhs: (rows.len(), lv.cols()),
                rhs: targets.shape(),
            });
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= lv.rows()) {
            return Err(Error::OutOfRange(alloc::format!(
                "softmax_kl row {bad} >= {}",
                lv.rows()
            )));
        }
        let mut probs = Matrix::zeros(rows.len(), lv.cols());
        let mut loss = 0.0;
        for (k, &r) in rows.iter().enumerate() {
            let lrow = lv.row(r);
            let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + math::ln(lrow.iter().map(|v| math::exp(v - max)).sum::<f64>());
            let trow = targets.row(k);
            for (j, p) in probs.row_mut(k).iter_mut().enumerate() {
                let log_p = lrow[j] - log_z;
                *p = math::exp(log_p);
                let t = trow[j];
                if t > 0.0 {
                    loss += t * (math::ln(t) - log_p);
                }
            }
        }
        let out = Matrix::filled(1, 1, loss / rows.len() as f64);
        self.push(
            out,
            Op::SoftmaxKl {
                logits,
                rows: rows.clone(),
                targets,
                probs,
            },
            &[logits],
            "softmax_kl",
        )
    }

    /// Accumulates `d loss / d v` into every node that depends on a parameter.
    ///
    /// `loss` must be `1 x 1`. Gradients of intermediate nodes are released
    /// once propagated; parameter gradients stay readable via [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "backward",
                lhs: self.shape(loss),
                rhs: (1, 1),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, f: impl FnOnce(&mut Matrix, &[Node])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let (r, c) = self.nodes[v.0].value.shape();
        let mut g = self.grads[v.0].take().unwrap_or_else(|| Matrix::zeros(r, c));
        f(&mut g, &self.nodes);
        self.grads[v.0] = Some(g);
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        // The op is moved out so `self` stays mutably borrowable; it is put
        // back afterwards for structural inspection.
        let op = core::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga, n| matmul_t_acc(g, &n[b.0].value, ga));
                self.accumulate(b, |gb, n| t_matmul_acc(&n[a.0].value, g, gb));
            }
            Op::MatMulT(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga, n| matmul_acc(g, &n[b.0].value, ga));
                self.accumulate(b, |gb, n| t_matmul_acc(g, &n[a.0].value, gb));
            }
            Op::Add(a, b) => {
                self.accumulate(*a, |ga, _| ga.axpy(1.0, g));
                self.accumulate(*b, |gb, _| gb.axpy(1.0, g));
            }
            Op::AddRow(x, row) => {
                self.accumulate(*x, |gx, _| gx.axpy(1.0, g));
                self.accumulate(*row, |gr, _| {
                    for r in 0..g.rows() {
                        for (o, v) in gr.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |ga, n| {
                    for ((o, gv), bv) in ga
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(n[b.0].value.as_slice())
                    {
                        *o += gv * bv;
                    }
                });
                self.accumulate(b, |gb, n| {
                    for ((o, gv), av) in gb
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(n[a.0].value.as_slice())
                    {
                        *o += gv * av;
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(*x, |gx, _| gx.axpy(s, g));
            }
            Op::LinComb(a, x, b, y) => {
                let (a, b) = (*a, *b);
                self.accumulate(*x, |gx, _| gx.axpy(a, g));
                self.accumulate(*y, |gy, _| gy.axpy(b, g));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    self.accumulate(p, |gp, _| {
                        for r in 0..g.rows() {
                            for (o, v) in gp.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceCols(x, start) => {
                let start = *start;
                self.accumulate(*x, |gx, _| {
                    for r in 0..g.rows() {
                        for (o, v) in gx.row_mut(r)[start..start + g.cols()].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let (x, slope) = (*x, *slope);
                self.accumulate(x, |gx, n| {
                    let xv = n[x.0].value.as_slice();
                    for ((o, gv), v) in gx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(xv) {
                        *o += if *v > 0.0 { *gv } else { slope * gv };
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                let dy: Matrix = y.zip_with(g, |yv, gv| gv * (1.0 - yv * yv));
                self.accumulate(*x, |gx, _| gx.axpy(1.0, &dy));
            }
            Op::Relu(x) => {
                let x = *x;
                self.accumulate(x, |gx, n| {
                    let xv = n[x.0].value.as_slice();
                    for ((o, gv), v) in gx.as_mut_slice().iter_mut().zip(g.as_slice()).zip(xv) {
                        if *v > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Elu(x) => {
                let x = *x;
                let y = &self.nodes[i].value;
                let dy = {
                    let xv = &self.nodes[x.0].value;
                    Matrix::from_fn(g.rows(), g.cols(), |r, c| {
                        if xv[(r, c)] > 0.0 {
                            g[(r, c)]
                        } else {
                            g[(r, c)] * (y[(r, c)] + 1.0)
                        }
                    })
                };
                self.accumulate(x, |gx, _| gx.axpy(1.0, &dy));
            }
            Op::Dropout(x, mask) => {
                let dy = g.zip_with(mask, |gv, m| gv * m);
                self.accumulate(*x, |gx, _| gx.axpy(1.0, &dy));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                normed,
                inv_std,
            } => {
                let (rows, cols) = g.shape();
                self.accumulate(*beta, |gb, _| {
                    for r in 0..rows {
                        for (o, v) in gb.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
                self.accumulate(*gamma, |gg, _| {
                    for r in 0..rows {
                        for ((o, v), nv) in gg.as_mut_slice().iter_mut().zip(g.row(r)).zip(normed.row(r)) {
                            *o += v * nv;
                        }
                    }
                });
                let gam = self.nodes[gamma.0].value.as_slice().to_vec();
                self.accumulate(*x, |gx, _| {
                    let mut gxh = vec![0.0; cols];
                    for (r, &is) in inv_std.iter().enumerate().take(rows) {
                        let grow = g.row(r);
                        let nrow = normed.row(r);
                        for j in 0..cols {
                            gxh[j] = grow[j] * gam[j];
                        }
                        let mean_g = gxh.iter().sum::<f64>() / cols as f64;
                        let mean_gn = dot(&gxh, nrow) / cols as f64;
                        for (j, o) in gx.row_mut(r).iter_mut().enumerate() {
                            *o += is * (gxh[j] - mean_g - nrow[j] * mean_gn);
                        }
                    }
                });
            }
            Op::GatherRows(x, index) => {
                self.accumulate(*x, |gx, _| {
                    for (o, &src) in index.iter().enumerate() {
                        for (a, v) in gx.row_mut(src).iter_mut().zip(g.row(o)) {
                            *a += v;
                        }
                    }
                });
            }
            Op::ScatterAddRows(x, index) => {
                self.accumulate(*x, |gx, _| {
                    for (r, &t) in index.iter().enumerate() {
                        for (a, v) in gx.row_mut(r).iter_mut().zip(g.row(t)) {
                            *a += v;
                        }
                    }
                });
            }
            Op::SegmentSoftmax(x, offsets) => {
                let y = self.nodes[i].value.as_slice();
                let gv = g.as_slice();
                let mut dx = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    let seg = w[0]..w[1];
                    let inner: f64 = seg.clone().map(|e| y[e] * gv[e]).sum();
                    for e in seg {
                        dx[e] = y[e] * (gv[e] - inner);
                    }
                }
                self.accumulate(*x, |gx, _| {
                    for (o, d) in gx.as_mut_slice().iter_mut().zip(&dx) {
                        *o += d;
                    }
                });
            }
            Op::EdgeSpmm { att, h, graph } => {
                self.spmm_backward(*att, *h, graph, 1.0, g);
            }
            Op::DiffusionStep {
                att,
                z,
                z0,
                alpha,
                graph,
            } => {
                self.spmm_backward(*att, *z, graph, 1.0 - alpha, g);
                let a = *alpha;
                self.accumulate(*z0, |gz0, _| gz0.axpy(a, g));
            }
            Op::Sum(x) => {
                let s = g[(0, 0)];
                self.accumulate(*x, |gx, _| {
                    for o in gx.as_mut_slice() {
                        *o += s;
                    }
                });
            }
            Op::SoftmaxKl {
                logits,
                rows,
                targets,
                probs,
            } => {
                let s = g[(0, 0)] / rows.len() as f64;
                self.accumulate(*logits, |gl, _| {
                    for (k, &r) in rows.iter().enumerate() {
                        let trow = targets.row(k);
                        let prow = probs.row(k);
                        let tsum: f64 = trow.iter().sum();
                        for (j, o) in gl.row_mut(r).iter_mut().enumerate() {
                            *o += s * (tsum * prow[j] - trow[j]);
                        }
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }

    fn spmm_backward(&mut self, att: Var, h: Var, graph: &Graph, scale: f64, g: &Matrix) {
        let src = graph.sources();
        let dst = graph.destinations();
        self.accumulate(att, |ga, n| {
            let hv = &n[h.0].value;
            for (e, o) in ga.as_mut_slice().iter_mut().enumerate() {
                *o += scale * dot(g.row(dst[e]), hv.row(src[e]));
            }
        });
        self.accumulate(h, |gh, n| {
            let av = n[att.0].value.as_slice();
            for e in 0..av.len() {
                let w = scale * av[e];
                if w == 0.0 {
                    continue;
                }
                for (o, v) in gh.row_mut(src[e]).iter_mut().zip(g.row(dst[e])) {
                    *o += w * v;
                }
            }
        });
    }
}

/// `out[dst] += scale * att[e] * h[src]` over all edges, in edge order.
fn spmm_acc(att: &[f64], h: &Matrix, graph: &Graph, scale: f64, out: &mut Matrix) {
    let src = graph.sources();
    for node in 0..graph.num_nodes() {
        let seg = graph.incoming_segment(node);
        let orow = out.row_mut(node);
        for e in seg {
            let w = scale * att[e];
            if w == 0.0 {
                continue;
            }
            for (o, v) in orow.iter_mut().zip(h.row(src[e])) {
                *o += w * v;
            }
        }
    }
}
