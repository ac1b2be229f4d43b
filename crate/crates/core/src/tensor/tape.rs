//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order of the computation graph. [`Tape::backward`] walks it
//! once in reverse and accumulates adjoints into a dense gradient table.
//!
//! Kinks follow one convention throughout: the derivative is taken from the
//! active branch and is zero on exact ties (`relu` at 0, `max_const` where the
//! input equals the constant).

use std::cell::RefCell;

use super::normal::{standard_log_pdf, standard_log_survival};
use super::{gemm, MatRef, Tensor};
use crate::error::{Error, Result};

const SOFTPLUS_LINEAR_ABOVE: f64 = 30.0;

enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Square(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Exp(usize),
    Log(usize),
    MaxConst { input: usize, active: Vec<bool> },
    Sum(usize),
    Mean(usize),
    ConcatCols(Vec<usize>),
    SliceCols { input: usize, start: usize },
    GatherRows { input: usize, index: Vec<usize> },
    Reshape(usize),
    GraphMix { input: usize, adj: usize },
    StdLogSurvival(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass. Not shared across threads.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let requires = self.needs(parents);
        self.push(value, op, requires)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::domain("concat_cols of zero tensors"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows();
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let v = &nodes[p.id].value;
                if v.rows() != rows {
                    return Err(Error::Shape {
                        op: "concat_cols",
                        left: nodes[parts[0].id].value.shape().to_vec(),
                        right: v.shape().to_vec(),
                    });
                }
                widths.push(v.cols());
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, &w) in parts.iter().zip(&widths) {
                    let d = nodes[p.id].value.data();
                    out.extend_from_slice(&d[r * w..(r + 1) * w]);
                }
            }
            Tensor::from_matrix(rows, total, out)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(self.record(value, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Propagates adjoints from a scalar `loss` back to every node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        debug_assert!(std::ptr::eq(loss.tape, self));
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                propagate(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], nodes: &[Node], id: usize) -> Option<&'g mut [f64]> {
    if !nodes[id].requires_grad {
        return None;
    }
    let entry = &mut grads[id];
    if entry.is_none() {
        *entry = Some(Tensor::zeros(nodes[id].value.shape()));
    }
    entry.as_mut().map(|t| t.data_mut())
}

fn propagate(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let gd = g.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            for id in [*a, *b] {
                if let Some(s) = slot(grads, nodes, id) {
                    s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
            }
            if let Some(s) = slot(grads, nodes, *b) {
                s.iter_mut().zip(gd).for_each(|(s, g)| *s -= g);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] * bv[i];
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for i in 0..s.len() {
                    s[i] += gd[i] * av[i];
                }
            }
        }
        Op::Div(a, b) => {
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] / bv[i];
                }
            }
            if let Some(s) = slot(grads, nodes, *b) {
                for i in 0..s.len() {
                    s[i] -= gd[i] * av[i] / (bv[i] * bv[i]);
                }
            }
        }
        Op::AddRow(a, bias) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
            }
            let cols = g.cols();
            if let Some(s) = slot(grads, nodes, *bias) {
                for row in gd.chunks(cols) {
                    s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = nodes[*a].value.dims2();
            let n = nodes[*b].value.cols();
            let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(s) = slot(grads, nodes, *a) {
                // dA = dC * B^T
                gemm(
                    m,
                    n,
                    k,
                    MatRef::plain(gd, n),
                    MatRef::transposed(bv, n),
                    s,
                    true,
                );
            }
            if let Some(s) = slot(grads, nodes, *b) {
                // dB = A^T * dC
                gemm(
                    k,
                    m,
                    n,
                    MatRef::transposed(av, k),
                    MatRef::plain(gd, n),
                    s,
                    true,
                );
            }
        }
        Op::Scale(a, c) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(gd).for_each(|(s, g)| *s += c * g);
            }
        }
        Op::Offset(a) | Op::Reshape(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().zip(gd).for_each(|(s, g)| *s += g);
            }
        }
        Op::Square(a) => {
            let av = nodes[*a].value.data();
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += 2.0 * av[i] * gd[i];
                }
            }
        }
        Op::Sigmoid(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] * out[i] * (1.0 - out[i]);
                }
            }
        }
        Op::Tanh(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] * (1.0 - out[i] * out[i]);
                }
            }
        }
        Op::Relu(a) => {
            let av = nodes[*a].value.data();
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    if av[i] > 0.0 {
                        s[i] += gd[i];
                    }
                }
            }
        }
        Op::Softplus(a) => {
            let av = nodes[*a].value.data();
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] * sigmoid(av[i]);
                }
            }
        }
        Op::Exp(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] * out[i];
                }
            }
        }
        Op::Log(a) => {
            let av = nodes[*a].value.data();
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    s[i] += gd[i] / av[i];
                }
            }
        }
        Op::MaxConst { input, active } => {
            if let Some(s) = slot(grads, nodes, *input) {
                for i in 0..s.len() {
                    if active[i] {
                        s[i] += gd[i];
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                s.iter_mut().for_each(|s| *s += gd[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(s) = slot(grads, nodes, *a) {
                let scale = gd[0] / s.len() as f64;
                s.iter_mut().for_each(|s| *s += scale);
            }
        }
        Op::ConcatCols(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols();
                if let Some(s) = slot(grads, nodes, p) {
                    for r in 0..rows {
                        let src = &gd[r * total + offset..r * total + offset + w];
                        s[r * w..(r + 1) * w]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, g)| *s += g);
                    }
                }
                offset += w;
            }
        }
        Op::SliceCols { input, start } => {
            let width = g.cols();
            let cols = nodes[*input].value.cols();
            if let Some(s) = slot(grads, nodes, *input) {
                for (r, row) in gd.chunks(width).enumerate() {
                    let dst = &mut s[r * cols + start..r * cols + start + width];
                    dst.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::GatherRows { input, index } => {
            let cols = g.cols();
            if let Some(s) = slot(grads, nodes, *input) {
                for (row, &src) in gd.chunks(cols).zip(index) {
                    s[src * cols..(src + 1) * cols]
                        .iter_mut()
                        .zip(row)
                        .for_each(|(s, g)| *s += g);
                }
            }
        }
        Op::GraphMix { input, adj } => {
            let a = &nodes[*adj].value;
            let k = a.rows();
            let feat = g.cols();
            if let Some(s) = slot(grads, nodes, *input) {
                // dX_b = A^T dY_b for every k-row block b
                for (sb, gb) in s.chunks_mut(k * feat).zip(gd.chunks(k * feat)) {
                    gemm(
                        k,
                        k,
                        feat,
                        MatRef::transposed(a.data(), k),
                        MatRef::plain(gb, feat),
                        sb,
                        true,
                    );
                }
            }
        }
        Op::StdLogSurvival(a) => {
            let av = nodes[*a].value.data();
            if let Some(s) = slot(grads, nodes, *a) {
                for i in 0..s.len() {
                    // d/dz log S(z) = -phi(z) / S(z), the negated inverse Mills ratio
                    let hazard = (standard_log_pdf(av[i]) - out[i]).exp();
                    s[i] -= gd[i] * hazard;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_ABOVE {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` did not
    /// influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match &self.grads[v.id] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&v.shape()),
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        self.with_value(|t| t.data()[0])
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with_value(|t| t.map(f));
        self.tape.record(value, op, &[self.id])
    }

    fn zip(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        debug_assert!(std::ptr::eq(self.tape, other.tape));
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: name,
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.tape.record(value, op, &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    /// Adds a `1 x cols` row vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let cols = a.cols();
            if b.len() != cols || b.rows() != 1 {
                return Err(Error::Shape {
                    op: "add_row",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(cols) {
                row.iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
            }
            Tensor::new(a.shape().to_vec(), out)?
        };
        Ok(self
            .tape
            .record(value, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[other.id].value)?
        };
        Ok(self
            .tape
            .record(value, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, c), |x| c * x)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.id), |x| x + c)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |x| if x <= 0.0 { 0.0 } else { x })
    }

    pub fn softplus(self) -> Var<'t> {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    /// Element-wise `max(x, c)` against a constant tensor of the same shape.
    pub fn max_const(self, c: &Tensor) -> Result<Var<'t>> {
        let (value, active) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.shape() != c.shape() {
                return Err(Error::Shape {
                    op: "max_const",
                    left: x.shape().to_vec(),
                    right: c.shape().to_vec(),
                });
            }
            let active: Vec<bool> = x.data().iter().zip(c.data()).map(|(a, b)| a > b || a.is_nan()).collect();
            let data = x
                .data()
                .iter()
                .zip(c.data())
                .map(|(&a, &b)| if a > b || a.is_nan() { a } else { b })
                .collect();
            (Tensor::new(x.shape().to_vec(), data)?, active)
        };
        Ok(self.tape.record(
            value,
            Op::MaxConst {
                input: self.id,
                active,
            },
            &[self.id],
        ))
    }

    pub fn max_scalar(self, c: f64) -> Var<'t> {
        let full = Tensor::full(&self.shape(), c);
        self.max_const(&full).expect("shapes agree by construction")
    }

    pub fn sum(self) -> Var<'t> {
        let value = Tensor::scalar(self.with_value(|t| t.sum()));
        self.tape.record(value, Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t> {
        let value = Tensor::scalar(self.with_value(|t| t.sum() / t.len() as f64));
        self.tape.record(value, Op::Mean(self.id), &[self.id])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            let (rows, cols) = t.dims2();
            if start > end || end > cols {
                return Err(Error::Shape {
                    op: "slice_cols",
                    left: t.shape().to_vec(),
                    right: vec![start, end],
                });
            }
            let mut out = Vec::with_capacity(rows * (end - start));
            for row in t.data().chunks(cols) {
                out.extend_from_slice(&row[start..end]);
            }
            Tensor::from_matrix(rows, end - start, out)
        })?;
        Ok(self
            .tape
            .record(value, Op::SliceCols { input: self.id, start }, &[self.id]))
    }

    /// Rows `index[0], index[1], ..` of a matrix, repeats allowed.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'t>> {
        let value = self.with_value(|t| {
            let (rows, cols) = t.dims2();
            if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: t.shape().to_vec(),
                    right: vec![bad],
                });
            }
            let mut out = Vec::with_capacity(index.len() * cols);
            for &i in index {
                out.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
            }
            Tensor::from_matrix(index.len(), cols, out)
        })?;
        let op = Op::GatherRows {
            input: self.id,
            index: index.to_vec(),
        };
        Ok(self.tape.record(value, op, &[self.id]))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape.record(value, Op::Reshape(self.id), &[self.id]))
    }

    /// Applies a `k x k` mixing matrix to every consecutive block of `k` rows:
    /// `Y_b = A X_b`. The matrix is treated as a constant.
    pub fn graph_mix(self, adj: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, a) = (&nodes[self.id].value, &nodes[adj.id].value);
            let (k, k2) = a.dims2();
            let (rows, feat) = x.dims2();
            if k != k2 || k == 0 || rows % k != 0 {
                return Err(Error::Shape {
                    op: "graph_mix",
                    left: a.shape().to_vec(),
                    right: x.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; rows * feat];
            for (ob, xb) in out.chunks_mut(k * feat).zip(x.data().chunks(k * feat)) {
                gemm(
                    k,
                    k,
                    feat,
                    MatRef::plain(a.data(), k),
                    MatRef::plain(xb, feat),
                    ob,
                    false,
                );
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.tape.record(
            value,
            Op::GraphMix {
                input: self.id,
                adj: adj.id,
            },
            &[self.id],
        ))
    }

    /// `log(1 - Phi(z))` of a standardized input.
    pub fn std_log_survival(self) -> Var<'t> {
        self.unary(Op::StdLogSurvival(self.id), standard_log_survival)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn activations_basic_values() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![-1.0, 0.0, 2.0]));
        assert_eq!(x.relu().value().data(), &[0.0, 0.0, 2.0]);
        let z = tape.leaf(Tensor::scalar(0.0));
        assert_eq!(z.sigmoid().item(), 0.5);
        assert_eq!(z.tanh().item(), 0.0);
        let big = tape.leaf(Tensor::scalar(50.0));
        assert!((big.softplus().item() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let loss = x.square().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(3.0));
        let loss = c.scale(2.0);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn max_const_kink_subgradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![1.0, 2.0, 3.0]));
        let c = Tensor::row(vec![2.0, 2.0, 2.0]);
        let loss = x.max_const(&c).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        // below the constant, at the kink, above the constant
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_kink_subgradient_is_zero() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(vec![0.0]));
        let g = tape.backward(x.relu().sum()).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0]);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[3, 2]));
        let msg = a.add(b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let tape = Tape::new();
        let a = tape.leaf(t(2, 1, &[1.0, 2.0]));
        let b = tape.leaf(t(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = c.slice_cols(1, 3).unwrap();
        assert_eq!(s.value(), b.value());
        let w = tape.constant(t(2, 2, &[1.0, 10.0, 100.0, 1000.0]));
        let loss = s.mul(w).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(b).data(), &[1.0, 10.0, 100.0, 1000.0]);
        assert_eq!(g.wrt(a).data(), &[0.0, 0.0]);
    }

    #[test]
    fn graph_mix_applies_per_block() {
        let tape = Tape::new();
        let adj = tape.constant(t(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        // two blocks of two rows, one feature: swap rows inside each block
        let x = tape.leaf(t(4, 1, &[1.0, 2.0, 3.0, 4.0]));
        let y = x.graph_mix(adj).unwrap();
        assert_eq!(y.value().data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn add_row_bias_gradient_sums_rows() {
        let tape = Tape::new();
        let x = tape.leaf(t(3, 2, &[0.0; 6]));
        let b = tape.leaf(Tensor::row(vec![1.0, 2.0]));
        let loss = x.add_row(b).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(b).data(), &[3.0, 3.0]);
    }
}
