//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is an arena of nodes. Every operation evaluates eagerly when
//! it is recorded, so forward values are always available for control flow
//! (the transport solver stops on a convergence check of live values), and
//! the recorded trace is exactly what [`Graph::backward`] replays in
//! reverse. Node indices are topologically ordered by construction: an
//! operation can only refer to nodes that already exist.
//!
//! The primitive set is exactly what the ordering pipeline needs: matrix
//! product, elementwise arithmetic, a temperature sigmoid, column max-pool
//! with subgradient routing to the first argmax row, reductions, row
//! normalization, and row slicing/stacking. No broadcasting beyond what the
//! listed primitives state, no higher-order derivatives.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

#[cfg(not(feature = "std"))]
use num_traits::Float as _;

use crate::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor2};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Errors raised while recording operations or running backward.
#[derive(Debug, Clone, PartialEq)]
pub enum EngineError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        detail: String,
    },
    /// A scalar hyperparameter is out of range (e.g. non-positive sigmoid
    /// temperature).
    InvalidParam {
        op: &'static str,
        detail: String,
    },
    /// An operation that requires at least one row/element got none.
    EmptyInput {
        op: &'static str,
    },
    /// `backward` was called on a node that is not 1x1.
    NonScalarLoss {
        rows: usize,
        cols: usize,
    },
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineError::ShapeMismatch { op, detail } => {
                write!(f, "{op}: shape mismatch ({detail})")
            }
            EngineError::InvalidParam { op, detail } => write!(f, "{op}: {detail}"),
            EngineError::EmptyInput { op } => write!(f, "{op}: empty input"),
            EngineError::NonScalarLoss { rows, cols } => {
                write!(f, "backward: loss must be 1x1, got {rows}x{cols}")
            }
        }
    }
}

impl core::error::Error for EngineError {}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// Matrix times a 1x1 node.
    MulScalar(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Elementwise `1 / (1 + exp(-x / tau))`.
    SigmoidTemp(NodeId, f64),
    /// Column-wise max over rows; `argmax[j]` is the winning row (first on
    /// ties), which receives the whole gradient of column `j`.
    MaxPoolCols(NodeId, Vec<usize>),
    /// Global max as 1x1; flat position of the first argmax.
    MaxAll(NodeId, usize),
    Sum(NodeId),
    Mean(NodeId),
    /// Rows scaled to unit Euclidean norm; original norms cached.
    L2NormalizeRows(NodeId, Vec<f64>),
    Transpose(NodeId),
    /// Rows `start..start + len` of the parent.
    SliceRows(NodeId, usize),
    /// Vertical stack of the parents (equal column counts).
    ConcatRows(Vec<NodeId>),
    /// `x + b` with `b` a 1xC row added to every row of `x`.
    AddBiasRow(NodeId, NodeId),
    Reshape(NodeId),
}

struct NodeData {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

/// Computation graph: an arena of eagerly evaluated nodes.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<NodeData>,
    grads: Vec<Option<Tensor2>>,
}

/// Numerically stable `1 / (1 + exp(-z))`.
#[inline]
pub(crate) fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(NodeData { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that accumulates a gradient during backward.
    pub fn param(&mut self, value: Tensor2) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor2 {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass, if this node was reached.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor2> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the last backward pass; zeros if the node was unreached.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor2 {
        match self.grad(id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(id).shape();
                Tensor2::zeros(r, c)
            }
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn same_shape(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<(usize, usize), EngineError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(EngineError::ShapeMismatch {
                op,
                detail: format!("{}x{} vs {}x{}", sa.0, sa.1, sb.0, sb.1),
            });
        }
        Ok(sa)
    }

    fn zip_ew(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, EngineError> {
        let (r, c) = self.same_shape(op_name, a, b)?;
        let mut data = Vec::with_capacity(r * c);
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data().iter()) {
            data.push(f(x, y));
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor2::from_vec(r, c, data).expect("shape checked"), op, needs))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(EngineError::ShapeMismatch {
                op: "matmul",
                detail: format!("{m}x{ka} * {kb}x{n}"),
            });
        }
        let mut out = Tensor2::zeros(m, n);
        matmul_acc(&mut out, self.value(a), self.value(b));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        self.zip_ew("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        self.zip_ew("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        self.zip_ew("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        self.zip_ew("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiply every entry of `x` by the value of the 1x1 node `s`.
    pub fn mul_scalar(&mut self, x: NodeId, s: NodeId) -> Result<NodeId, EngineError> {
        if self.shape(s) != (1, 1) {
            let (r, c) = self.shape(s);
            return Err(EngineError::ShapeMismatch {
                op: "mul_scalar",
                detail: format!("scalar operand is {r}x{c}"),
            });
        }
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v * sv);
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(out, Op::MulScalar(x, s), needs))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, EngineError> {
        let out = self.value(x).map(|v| v * c);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Scale(x, c), needs))
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> Result<NodeId, EngineError> {
        let out = self.value(x).map(|v| v + c);
        let needs = self.needs(x);
        Ok(self.push(out, Op::AddScalar(x), needs))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let needs = self.needs(x);
        Ok(self.push(out, Op::Relu(x), needs))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let out = self.value(x).map(f64::exp);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Exp(x), needs))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let out = self.value(x).map(f64::ln);
        let needs = self.needs(x);
        Ok(self.push(out, Op::Log(x), needs))
    }

    /// Elementwise sigmoid with temperature: `1 / (1 + exp(-x / tau))`.
    pub fn sigmoid_temp(&mut self, x: NodeId, tau: f64) -> Result<NodeId, EngineError> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(EngineError::InvalidParam {
                op: "sigmoid_temp",
                detail: format!("temperature must be positive and finite, got {tau}"),
            });
        }
        let out = self.value(x).map(|v| stable_sigmoid(v / tau));
        let needs = self.needs(x);
        Ok(self.push(out, Op::SigmoidTemp(x, tau), needs))
    }

    /// Column-wise max over rows, returning a 1xC row. The backward pass
    /// routes each column's gradient to the first row attaining the max.
    pub fn maxpool_cols(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        if self.shape(x).0 == 0 {
            return Err(EngineError::EmptyInput { op: "maxpool_cols" });
        }
        let (vals, arg) = self.value(x).col_max();
        let needs = self.needs(x);
        Ok(self.push(vals, Op::MaxPoolCols(x, arg), needs))
    }

    /// Global max over all entries as a 1x1 node; gradient goes to the first
    /// entry attaining it (row-major order).
    pub fn max_all(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        if self.value(x).numel() == 0 {
            return Err(EngineError::EmptyInput { op: "max_all" });
        }
        let (v, i, j) = self.value(x).max_entry();
        let pos = i * self.shape(x).1 + j;
        let needs = self.needs(x);
        Ok(self.push(Tensor2::scalar(v), Op::MaxAll(x, pos), needs))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor2::scalar(s), Op::Sum(x), needs))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        if self.value(x).numel() == 0 {
            return Err(EngineError::EmptyInput { op: "mean" });
        }
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Tensor2::scalar(s / n), Op::Mean(x), needs))
    }

    /// Scale each row to unit Euclidean norm. Zero rows are rejected.
    pub fn l2_normalize_rows(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let (r, c) = self.shape(x);
        let mut norms = Vec::with_capacity(r);
        let mut out = Tensor2::zeros(r, c);
        for i in 0..r {
            let row = self.value(x).row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Err(EngineError::InvalidParam {
                    op: "l2_normalize_rows",
                    detail: format!("row {i} has zero norm"),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                out.set(i, j, v / norm);
            }
            norms.push(norm);
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::L2NormalizeRows(x, norms), needs))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, EngineError> {
        let out = self.value(x).transpose();
        let needs = self.needs(x);
        Ok(self.push(out, Op::Transpose(x), needs))
    }

    /// Rows `start..start + len` as a new node (the row-gather primitive).
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, EngineError> {
        let (r, _) = self.shape(x);
        if len == 0 || start + len > r {
            return Err(EngineError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {start}..{} of {r}", start + len),
            });
        }
        let out = self.value(x).slice_rows(start, len);
        let needs = self.needs(x);
        Ok(self.push(out, Op::SliceRows(x, start), needs))
    }

    /// Stack the given nodes vertically; all must share a column count.
    pub fn concat_rows(&mut self, xs: &[NodeId]) -> Result<NodeId, EngineError> {
        let Some(&first) = xs.first() else {
            return Err(EngineError::EmptyInput { op: "concat_rows" });
        };
        let cols = self.shape(first).1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut needs = false;
        for &x in xs {
            let (r, c) = self.shape(x);
            if c != cols {
                return Err(EngineError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("column counts {cols} vs {c}"),
                });
            }
            rows += r;
            data.extend_from_slice(self.value(x).data());
            needs |= self.needs(x);
        }
        let out = Tensor2::from_vec(rows, cols, data).expect("shape checked");
        Ok(self.push(out, Op::ConcatRows(xs.to_vec()), needs))
    }

    /// Add the 1xC row `b` to every row of `x`.
    pub fn add_bias_row(&mut self, x: NodeId, b: NodeId) -> Result<NodeId, EngineError> {
        let (r, c) = self.shape(x);
        if self.shape(b) != (1, c) {
            let (br, bc) = self.shape(b);
            return Err(EngineError::ShapeMismatch {
                op: "add_bias_row",
                detail: format!("bias {br}x{bc} for data {r}x{c}"),
            });
        }
        let mut out = self.value(x).clone();
        for i in 0..r {
            let bias = &self.nodes[b.0].value;
            // rows borrow disjoint data; copy bias values directly
            for j in 0..c {
                let v = out.get(i, j) + bias.get(0, j);
                out.set(i, j, v);
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddBiasRow(x, b), needs))
    }

    /// Reinterpret the row-major buffer with a new shape.
    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId, EngineError> {
        if self.value(x).numel() != rows * cols {
            return Err(EngineError::ShapeMismatch {
                op: "reshape",
                detail: format!("{} elements into {rows}x{cols}", self.value(x).numel()),
            });
        }
        let out = self.value(x).reshaped(rows, cols).expect("numel checked");
        let needs = self.needs(x);
        Ok(self.push(out, Op::Reshape(x), needs))
    }

    /// Reverse pass from a 1x1 loss node. Gradients of all nodes reachable
    /// from the loss (and flagged as needing gradients) are accumulated;
    /// everything else stays at zero.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), EngineError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(EngineError::NonScalarLoss { rows: r, cols: c });
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor2::scalar(1.0));

        for id in (0..=loss.0).rev() {
            if self.grads[id].is_none() || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            // Parents always precede children in the arena, so splitting at
            // `id` lets us read this node's gradient while writing parents'.
            let (before, after) = self.grads.split_at_mut(id);
            let g = after[0].as_ref().expect("checked above");
            let node = &self.nodes[id];
            apply_vjp(&self.nodes, node, g, before);
        }
        Ok(())
    }
}

fn accum<'a>(slot: &'a mut Option<Tensor2>, rows: usize, cols: usize) -> &'a mut Tensor2 {
    slot.get_or_insert_with(|| Tensor2::zeros(rows, cols))
}

/// Accumulate this node's vector-Jacobian product into its parents' slots.
fn apply_vjp(nodes: &[NodeData], node: &NodeData, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
    let needs = |id: NodeId| nodes[id.0].needs_grad;
    let val = |id: NodeId| &nodes[id.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if needs(*a) {
                let (m, k) = val(*a).shape();
                matmul_nt_acc(accum(&mut grads[a.0], m, k), g, val(*b));
            }
            if needs(*b) {
                let (k, n) = val(*b).shape();
                matmul_tn_acc(accum(&mut grads[b.0], k, n), val(*a), g);
            }
        }
        Op::Add(a, b) => {
            let (r, c) = g.shape();
            if needs(*a) {
                accum(&mut grads[a.0], r, c).add_scaled_assign(g, 1.0);
            }
            if needs(*b) {
                accum(&mut grads[b.0], r, c).add_scaled_assign(g, 1.0);
            }
        }
        Op::Sub(a, b) => {
            let (r, c) = g.shape();
            if needs(*a) {
                accum(&mut grads[a.0], r, c).add_scaled_assign(g, 1.0);
            }
            if needs(*b) {
                accum(&mut grads[b.0], r, c).add_scaled_assign(g, -1.0);
            }
        }
        Op::Mul(a, b) => {
            let (r, c) = g.shape();
            if needs(*a) {
                let dst = accum(&mut grads[a.0], r, c);
                for ((d, &gv), &bv) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(val(*b).data())
                {
                    *d += gv * bv;
                }
            }
            if needs(*b) {
                let dst = accum(&mut grads[b.0], r, c);
                for ((d, &gv), &av) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(val(*a).data())
                {
                    *d += gv * av;
                }
            }
        }
        Op::Div(a, b) => {
            let (r, c) = g.shape();
            if needs(*a) {
                let dst = accum(&mut grads[a.0], r, c);
                for ((d, &gv), &bv) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(val(*b).data())
                {
                    *d += gv / bv;
                }
            }
            if needs(*b) {
                let dst = accum(&mut grads[b.0], r, c);
                let out = node.value.data();
                for (((d, &gv), &ov), &bv) in dst
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(out)
                    .zip(val(*b).data())
                {
                    // d(a/b)/db = -a/b^2 = -out/b
                    *d -= gv * ov / bv;
                }
            }
        }
        Op::MulScalar(x, s) => {
            let (r, c) = g.shape();
            let sv = val(*s).item();
            if needs(*x) {
                accum(&mut grads[x.0], r, c).add_scaled_assign(g, sv);
            }
            if needs(*s) {
                let mut acc = 0.0;
                for (&gv, &xv) in g.data().iter().zip(val(*x).data()) {
                    acc += gv * xv;
                }
                accum(&mut grads[s.0], 1, 1).data_mut()[0] += acc;
            }
        }
        Op::Scale(x, cst) => {
            if needs(*x) {
                let (r, c) = g.shape();
                accum(&mut grads[x.0], r, c).add_scaled_assign(g, *cst);
            }
        }
        Op::AddScalar(x) => {
            if needs(*x) {
                let (r, c) = g.shape();
                accum(&mut grads[x.0], r, c).add_scaled_assign(g, 1.0);
            }
        }
        Op::Relu(x) => {
            if needs(*x) {
                let (r, c) = g.shape();
                let dst = accum(&mut grads[x.0], r, c);
                for ((d, &gv), &xv) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(val(*x).data())
                {
                    if xv > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::Exp(x) => {
            if needs(*x) {
                let (r, c) = g.shape();
                let dst = accum(&mut grads[x.0], r, c);
                for ((d, &gv), &ov) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(node.value.data())
                {
                    *d += gv * ov;
                }
            }
        }
        Op::Log(x) => {
            if needs(*x) {
                let (r, c) = g.shape();
                let dst = accum(&mut grads[x.0], r, c);
                for ((d, &gv), &xv) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(val(*x).data())
                {
                    *d += gv / xv;
                }
            }
        }
        Op::SigmoidTemp(x, tau) => {
            if needs(*x) {
                let (r, c) = g.shape();
                let dst = accum(&mut grads[x.0], r, c);
                for ((d, &gv), &ov) in
                    dst.data_mut().iter_mut().zip(g.data()).zip(node.value.data())
                {
                    *d += gv * ov * (1.0 - ov) / tau;
                }
            }
        }
        Op::MaxPoolCols(x, arg) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let dst = accum(&mut grads[x.0], r, c);
                for (j, &row) in arg.iter().enumerate() {
                    let v = dst.get(row, j) + g.get(0, j);
                    dst.set(row, j, v);
                }
            }
        }
        Op::MaxAll(x, pos) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let dst = accum(&mut grads[x.0], r, c);
                dst.data_mut()[*pos] += g.item();
            }
        }
        Op::Sum(x) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let gv = g.item();
                let dst = accum(&mut grads[x.0], r, c);
                for d in dst.data_mut() {
                    *d += gv;
                }
            }
        }
        Op::Mean(x) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let gv = g.item() / (r * c) as f64;
                let dst = accum(&mut grads[x.0], r, c);
                for d in dst.data_mut() {
                    *d += gv;
                }
            }
        }
        Op::L2NormalizeRows(x, norms) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let dst = accum(&mut grads[x.0], r, c);
                for i in 0..r {
                    let y = node.value.row(i);
                    let gr = g.row(i);
                    let dot: f64 = gr.iter().zip(y).map(|(&gv, &yv)| gv * yv).sum();
                    let inv = 1.0 / norms[i];
                    let drow = dst.row_mut(i);
                    for ((d, &gv), &yv) in drow.iter_mut().zip(gr).zip(y) {
                        *d += (gv - dot * yv) * inv;
                    }
                }
            }
        }
        Op::Transpose(x) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let gt = g.transpose();
                accum(&mut grads[x.0], r, c).add_scaled_assign(&gt, 1.0);
            }
        }
        Op::SliceRows(x, start) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let dst = accum(&mut grads[x.0], r, c);
                for i in 0..g.rows() {
                    let drow = dst.row_mut(start + i);
                    for (d, &gv) in drow.iter_mut().zip(g.row(i)) {
                        *d += gv;
                    }
                }
            }
        }
        Op::ConcatRows(xs) => {
            let mut offset = 0;
            for &x in xs {
                let (r, c) = val(x).shape();
                if needs(x) {
                    let dst = accum(&mut grads[x.0], r, c);
                    for i in 0..r {
                        let drow = dst.row_mut(i);
                        for (d, &gv) in drow.iter_mut().zip(g.row(offset + i)) {
                            *d += gv;
                        }
                    }
                }
                offset += r;
            }
        }
        Op::AddBiasRow(x, b) => {
            let (r, c) = g.shape();
            if needs(*x) {
                accum(&mut grads[x.0], r, c).add_scaled_assign(g, 1.0);
            }
            if needs(*b) {
                let dst = accum(&mut grads[b.0], 1, c);
                for i in 0..r {
                    for (d, &gv) in dst.data_mut().iter_mut().zip(g.row(i)) {
                        *d += gv;
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if needs(*x) {
                let (r, c) = val(*x).shape();
                let dst = accum(&mut grads[x.0], r, c);
                for (d, &gv) in dst.data_mut().iter_mut().zip(g.data()) {
                    *d += gv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Random entries in [lo, hi).
    fn rand_tensor(r: usize, c: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor2 {
        Tensor2::from_fn(r, c, |_, _| rng.gen_range(lo..hi))
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn matmul_identity_case() {
        let mut g = Graph::new();
        let m = g.constant(Tensor2::from_vec(2, 2, vec![3.0, -1.0, 0.5, 7.0]).unwrap());
        let eye = g.constant(Tensor2::identity(2));
        let out = g.matmul(eye, m).unwrap();
        assert_eq!(g.value(out), g.value(m));
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let mut g = Graph::new();
        let a = g.constant(Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor2::from_vec(2, 1, vec![1.0, 1.0]).unwrap());
        let out = g.matmul(a, b).unwrap();
        assert_eq!(g.value(out).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor2::zeros(2, 3));
        let b = g.constant(Tensor2::zeros(2, 3));
        assert!(matches!(
            g.matmul(a, b),
            Err(EngineError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn grad_of_sum_of_product_is_ones_times_bt() {
        let mut r = rng(11);
        let a_val = rand_tensor(3, 4, -1.0, 1.0, &mut r);
        let b_val = rand_tensor(4, 2, -1.0, 1.0, &mut r);

        let mut g = Graph::new();
        let a = g.param(a_val.clone());
        let b = g.constant(b_val.clone());
        let prod = g.matmul(a, b).unwrap();
        let loss = g.sum(prod).unwrap();
        g.backward(loss).unwrap();

        let expected = Tensor2::ones(3, 2).matmul(&b_val.transpose());
        let got = g.grad(a).unwrap();
        for (x, y) in got.data().iter().zip(expected.data()) {
            assert_close(*x, *y, 1e-12);
        }

        // Same thing against the finite-difference oracle.
        let report = check_gradients(&[a_val], 1e-6, |g, ids| {
            let b = g.constant(b_val.clone());
            let p = g.matmul(ids[0], b)?;
            g.sum(p)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn sigmoid_temp_known_values() {
        for tau in [0.25, 0.5, 2.0] {
            let mut g = Graph::new();
            let x = g.constant(Tensor2::from_vec(1, 2, vec![0.0, tau * 3.0f64.ln()]).unwrap());
            let y = g.sigmoid_temp(x, tau).unwrap();
            assert_close(g.value(y).get(0, 0), 0.5, 1e-15);
            assert_close(g.value(y).get(0, 1), 0.75, 1e-12);
        }
    }

    #[test]
    fn sigmoid_temp_rejects_bad_temperature() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::zeros(1, 1));
        assert!(g.sigmoid_temp(x, 0.0).is_err());
        assert!(g.sigmoid_temp(x, -1.0).is_err());
        assert!(g.sigmoid_temp(x, f64::NAN).is_err());
    }

    #[test]
    fn sigmoid_temp_derivative_at_zero() {
        for tau in [0.3, 0.5, 1.7] {
            let report = check_gradients(&[Tensor2::scalar(0.0)], 1e-6, |g, ids| {
                let y = g.sigmoid_temp(ids[0], tau)?;
                g.sum(y)
            })
            .unwrap();
            // analytic slope of sigmoid(x/tau) at 0 is 1/(4 tau)
            assert_close(report.fd_at_worst.max(report.analytic_at_worst), 1.0 / (4.0 * tau), 1e-6);
            assert!(report.max_rel_err < 1e-4);
        }
    }

    #[test]
    fn sigmoid_temp_is_stable_at_extreme_arguments() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::from_vec(1, 2, vec![-5.0, 5.0]).unwrap());
        let y = g.sigmoid_temp(x, 1e-4).unwrap();
        assert_eq!(g.value(y).get(0, 0), 0.0);
        assert_eq!(g.value(y).get(0, 1), 1.0);
        assert!(g.value(y).is_finite());
    }

    #[test]
    fn maxpool_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let y = g.maxpool_cols(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 1.0]);

        let single = g.constant(Tensor2::from_vec(1, 3, vec![0.3, -2.0, 5.0]).unwrap());
        let pooled = g.maxpool_cols(single).unwrap();
        assert_eq!(g.value(pooled).data(), &[0.3, -2.0, 5.0]);
    }

    #[test]
    fn maxpool_gradient_is_indicator_per_column() {
        let mut r = rng(7);
        // margins well away from ties
        let x_val = rand_tensor(5, 4, 0.0, 1.0, &mut r);

        let mut g = Graph::new();
        let x = g.param(x_val.clone());
        let y = g.maxpool_cols(x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();

        let grad = g.grad(x).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..5).map(|i| grad.get(i, j)).collect();
            assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1, "col {j}: {col:?}");
            assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 4);
        }

        let report = check_gradients(&[x_val], 1e-6, |g, ids| {
            let y = g.maxpool_cols(ids[0])?;
            g.sum(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4);
    }

    #[test]
    fn maxpool_tie_routes_to_lowest_row() {
        let mut g = Graph::new();
        let x = g.param(Tensor2::from_vec(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
        let y = g.maxpool_cols(x).unwrap();
        let loss = g.sum(y).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_empty() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::zeros(0, 3));
        assert!(matches!(g.maxpool_cols(x), Err(EngineError::EmptyInput { .. })));
    }

    #[test]
    fn backward_linear_and_quadratic_cases() {
        let mut r = rng(3);
        let w_val = rand_tensor(3, 3, -2.0, 2.0, &mut r);

        let mut g = Graph::new();
        let w = g.param(w_val.clone());
        let loss = g.sum(w).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap(), &Tensor2::ones(3, 3));

        let mut g = Graph::new();
        let w = g.param(w_val.clone());
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(w).unwrap();
        for (got, want) in grad.data().iter().zip(w_val.data()) {
            assert_close(*got, 2.0 * want, 1e-12);
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let w = g.param(Tensor2::zeros(2, 2));
        assert!(matches!(
            g.backward(w),
            Err(EngineError::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn unreached_parameters_have_zero_grads() {
        let mut g = Graph::new();
        let used = g.param(Tensor2::ones(2, 2));
        let unused = g.param(Tensor2::ones(2, 2));
        let loss = g.sum(used).unwrap();
        g.backward(loss).unwrap();
        assert!(g.grad(unused).is_none());
        assert_eq!(g.grad_or_zeros(unused), Tensor2::zeros(2, 2));
    }

    #[test]
    fn composite_mlp_loss_matches_finite_differences() {
        let mut r = rng(21);
        let x = rand_tensor(4, 3, -1.0, 1.0, &mut r);
        let w1 = rand_tensor(3, 5, -0.8, 0.8, &mut r);
        let b1 = rand_tensor(1, 5, -0.2, 0.2, &mut r);
        let w2 = rand_tensor(5, 2, -0.8, 0.8, &mut r);

        let report = check_gradients(&[w1, b1, w2], 1e-6, |g, ids| {
            let xin = g.constant(x.clone());
            let h = g.matmul(xin, ids[0])?;
            let h = g.add_bias_row(h, ids[1])?;
            let h = g.relu(h)?;
            let out = g.matmul(h, ids[2])?;
            let sq = g.mul(out, out)?;
            g.mean(sq)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn backward_of_sum_of_losses_is_sum_of_backwards() {
        let mut r = rng(5);
        let w_val = rand_tensor(3, 2, 0.2, 1.5, &mut r);

        let grad_of = |single: usize| -> Tensor2 {
            let mut g = Graph::new();
            let w = g.param(w_val.clone());
            let l1 = g.sum(w).unwrap();
            let sq = g.mul(w, w).unwrap();
            let l2 = g.mean(sq).unwrap();
            let loss = match single {
                0 => l1,
                1 => l2,
                _ => g.add(l1, l2).unwrap(),
            };
            g.backward(loss).unwrap();
            g.grad(w).unwrap().clone()
        };

        let g1 = grad_of(0);
        let g2 = grad_of(1);
        let gsum = grad_of(2);
        for ((a, b), s) in g1.data().iter().zip(g2.data()).zip(gsum.data()) {
            assert_close(a + b, *s, 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic_bit_for_bit() {
        let mut r = rng(9);
        let x_val = rand_tensor(6, 4, -2.0, 2.0, &mut r);
        let w_val = rand_tensor(4, 4, -1.0, 1.0, &mut r);

        let run = || {
            let mut g = Graph::new();
            let x = g.constant(x_val.clone());
            let w = g.param(w_val.clone());
            let h = g.matmul(x, w).unwrap();
            let h = g.sigmoid_temp(h, 0.5).unwrap();
            let p = g.maxpool_cols(h).unwrap();
            let loss = g.sum(p).unwrap();
            g.backward(loss).unwrap();
            (g.value(loss).item(), g.grad(w).unwrap().clone())
        };
        let (l1, gr1) = run();
        let (l2, gr2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(gr1, gr2);
    }

    /// Every primitive passes the finite-difference check at random points
    /// away from its non-smooth loci.
    #[test]
    fn every_primitive_passes_gradient_check() {
        let mut r = rng(42);
        type Builder = fn(&mut Graph, &[NodeId]) -> Result<NodeId, EngineError>;
        // (name, input shapes, value range, builder)
        let cases: Vec<(&str, Vec<(usize, usize)>, (f64, f64), Builder)> = vec![
            ("matmul", vec![(3, 4), (4, 2)], (-1.0, 1.0), |g, ids| {
                let p = g.matmul(ids[0], ids[1])?;
                let sq = g.mul(p, p)?;
                g.sum(sq)
            }),
            ("add", vec![(3, 3), (3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.add(ids[0], ids[1])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("sub", vec![(3, 3), (3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.sub(ids[0], ids[1])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("mul", vec![(3, 3), (3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.mul(ids[0], ids[1])?;
                g.sum(s)
            }),
            ("div", vec![(3, 3), (3, 3)], (0.5, 2.0), |g, ids| {
                let s = g.div(ids[0], ids[1])?;
                g.sum(s)
            }),
            ("mul_scalar", vec![(3, 3), (1, 1)], (0.3, 2.0), |g, ids| {
                let s = g.mul_scalar(ids[0], ids[1])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("scale_add_scalar", vec![(3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.scale(ids[0], -2.5)?;
                let s = g.add_scalar(s, 0.7)?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("relu", vec![(4, 4)], (0.1, 1.0), |g, ids| {
                let s = g.relu(ids[0])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("exp", vec![(3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.exp(ids[0])?;
                g.sum(s)
            }),
            ("log", vec![(3, 3)], (0.5, 3.0), |g, ids| {
                let s = g.log(ids[0])?;
                g.sum(s)
            }),
            ("sigmoid_temp", vec![(3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.sigmoid_temp(ids[0], 0.5)?;
                g.sum(s)
            }),
            ("maxpool_cols", vec![(5, 3)], (0.0, 1.0), |g, ids| {
                let s = g.maxpool_cols(ids[0])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("max_all", vec![(4, 4)], (0.0, 1.0), |g, ids| {
                let s = g.max_all(ids[0])?;
                g.sum(s)
            }),
            ("mean", vec![(3, 5)], (-1.0, 1.0), |g, ids| {
                let sq = g.mul(ids[0], ids[0])?;
                g.mean(sq)
            }),
            ("l2_normalize_rows", vec![(3, 4)], (0.3, 1.5), |g, ids| {
                let y = g.l2_normalize_rows(ids[0])?;
                let w = g.constant(Tensor2::from_fn(3, 4, |i, j| 0.1 * (i + 2 * j) as f64 - 0.3));
                let p = g.mul(y, w)?;
                g.sum(p)
            }),
            ("transpose", vec![(3, 4)], (-1.0, 1.0), |g, ids| {
                let t = g.transpose(ids[0])?;
                let sq = g.mul(t, t)?;
                g.sum(sq)
            }),
            ("slice_rows", vec![(5, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.slice_rows(ids[0], 1, 3)?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("concat_rows", vec![(2, 3), (3, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.concat_rows(&[ids[0], ids[1]])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("add_bias_row", vec![(4, 3), (1, 3)], (-1.0, 1.0), |g, ids| {
                let s = g.add_bias_row(ids[0], ids[1])?;
                let sq = g.mul(s, s)?;
                g.sum(sq)
            }),
            ("reshape", vec![(2, 6)], (-1.0, 1.0), |g, ids| {
                let s = g.reshape(ids[0], 3, 4)?;
                let w = g.constant(Tensor2::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1));
                let p = g.mul(s, w)?;
                g.sum(p)
            }),
        ];

        for (name, shapes, (lo, hi), build) in cases {
            let inputs: Vec<Tensor2> = shapes
                .iter()
                .map(|&(rr, cc)| rand_tensor(rr, cc, lo, hi, &mut r))
                .collect();
            let report = check_gradients(&inputs, 1e-6, build).unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "{name}: rel err {} at {:?} (analytic {}, fd {})",
                report.max_rel_err,
                report.worst,
                report.analytic_at_worst,
                report.fd_at_worst
            );
        }
    }

    #[test]
    fn slice_and_concat_shape_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::zeros(3, 2));
        assert!(g.slice_rows(x, 2, 2).is_err());
        assert!(g.slice_rows(x, 0, 0).is_err());
        let y = g.constant(Tensor2::zeros(3, 4));
        assert!(g.concat_rows(&[x, y]).is_err());
        assert!(g.concat_rows(&[]).is_err());
    }

    #[test]
    fn l2_normalize_rejects_zero_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor2::zeros(2, 3));
        assert!(g.l2_normalize_rows(x).is_err());
    }
}
