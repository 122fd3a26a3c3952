//! Reverse-mode automatic differentiation over [`DenseMatrix`] values.
//!
//! A [`Graph`] is an arena of nodes built eagerly during the forward pass;
//! node handles ([`NodeId`]) index into it. Creation order is a topological
//! order, so [`Graph::backward`] replays nodes in reverse, accumulating each
//! parent's gradient additively (a value used `k` times receives the sum of
//! `k` contributions). Subgraphs that cannot influence any trainable leaf are
//! skipped entirely.
//!
//! Every operation validates shapes up front and checks its output for
//! non-finite entries, so numerical blow-ups surface at the op that produced
//! them instead of corrupting a later step.

use crate::autodiff::matrix::{dgemm_view, DenseMatrix};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `a * x + b`, entrywise; only the slope is needed for backward.
    Affine(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Softplus(NodeId),
    ConcatCols(NodeId, NodeId),
    /// Matrix plus a `1×cols` bias row broadcast over all rows.
    AddRowBias(NodeId, NodeId),
    Transpose(NodeId),
    Sum(NodeId),
}

#[derive(Debug)]
struct Node {
    value: DenseMatrix,
    grad: Option<DenseMatrix>,
    op: Op,
    requires_grad: bool,
}

/// Dynamic computation graph; rebuilt per forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DenseMatrix, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf: participates in gradient computation.
    pub fn param(&mut self, value: DenseMatrix) -> Result<NodeId> {
        value.check_finite("param leaf")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Constant leaf: carried through the forward pass, no gradient.
    pub fn constant(&mut self, value: DenseMatrix) -> Result<NodeId> {
        value.check_finite("constant leaf")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    /// Value computed at `id`.
    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.node(id).value
    }

    /// Gradient accumulated at `id`; zeros if backward never reached it.
    pub fn grad_of(&self, id: NodeId) -> DenseMatrix {
        let n = self.node(id);
        match &n.grad {
            Some(g) => g.clone(),
            None => DenseMatrix::zeros(n.value.rows(), n.value.cols()),
        }
    }

    /// Clear all accumulated gradients, keeping values and structure.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn finish(
        &mut self,
        value: DenseMatrix,
        op: Op,
        requires_grad: bool,
        name: &str,
    ) -> Result<NodeId> {
        value.check_finite(name)?;
        Ok(self.push(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.matmul(&self.node(b).value)?;
        let rg = self.needs(a) || self.needs(b);
        self.finish(value, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.add(&self.node(b).value)?;
        let rg = self.needs(a) || self.needs(b);
        self.finish(value, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.sub(&self.node(b).value)?;
        let rg = self.needs(a) || self.needs(b);
        self.finish(value, Op::Sub(a, b), rg, "sub")
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.hadamard(&self.node(b).value)?;
        let rg = self.needs(a) || self.needs(b);
        self.finish(value, Op::Mul(a, b), rg, "mul")
    }

    /// Entrywise `a*x + b` with scalar constants.
    pub fn affine(&mut self, x: NodeId, a: f64, b: f64) -> Result<NodeId> {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::numerical("non-finite affine coefficients".to_string()));
        }
        let value = self.node(x).value.map(|v| a * v + b);
        let rg = self.needs(x);
        self.finish(value, Op::Affine(x, a), rg, "affine")
    }

    /// Entrywise scaling by a constant.
    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.affine(x, c, 0.0)
    }

    /// Entrywise `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.map(sigmoid_scalar);
        let rg = self.needs(x);
        self.finish(value, Op::Sigmoid(x), rg, "sigmoid")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.map(f64::tanh);
        let rg = self.needs(x);
        self.finish(value, Op::Tanh(x), rg, "tanh")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.map(|v| v.max(0.0));
        let rg = self.needs(x);
        self.finish(value, Op::Relu(x), rg, "relu")
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.map(f64::exp);
        let rg = self.needs(x);
        self.finish(value, Op::Exp(x), rg, "exp")
    }

    /// Numerically stable `ln(1 + e^x)`.
    pub fn softplus(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.map(softplus_scalar);
        let rg = self.needs(x);
        self.finish(value, Op::Softplus(x), rg, "softplus")
    }

    /// Horizontal concatenation `[a, b]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a).value.concat_cols(&self.node(b).value)?;
        let rg = self.needs(a) || self.needs(b);
        self.finish(value, Op::ConcatCols(a, b), rg, "concat_cols")
    }

    /// Add a `1×cols` bias row to every row of `x`.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xv = &self.node(x).value;
        let bv = &self.node(bias).value;
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape("add_row_bias", xv.shape(), bv.shape()));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for j in 0..value.cols() {
                let v = value.get(i, j) + bv.get(0, j);
                value.set(i, j, v);
            }
        }
        let rg = self.needs(x) || self.needs(bias);
        self.finish(value, Op::AddRowBias(x, bias), rg, "add_row_bias")
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.node(x).value.transpose();
        let rg = self.needs(x);
        self.finish(value, Op::Transpose(x), rg, "transpose")
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let value = DenseMatrix::from_vec(1, 1, vec![self.node(x).value.sum()])
            .map_err(|_| Error::numerical("non-finite value produced by sum".to_string()))?;
        let rg = self.needs(x);
        self.finish(value, Op::Sum(x), rg, "sum")
    }

    /// Mean of all entries as a `1×1` node.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let len = self.node(x).value.len();
        if len == 0 {
            return Err(Error::config("mean of an empty matrix".to_string()));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / len as f64)
    }

    fn accumulate(&mut self, id: NodeId, contrib: DenseMatrix) -> Result<()> {
        match &mut self.nodes[id.0].grad {
            Some(g) => g.add_scaled(&contrib, 1.0),
            slot @ None => {
                *slot = Some(contrib);
                Ok(())
            }
        }
    }

    fn take_grad_or_zeros(&mut self, id: NodeId) -> DenseMatrix {
        let shape = self.nodes[id.0].value.shape();
        self.nodes[id.0]
            .grad
            .take()
            .unwrap_or_else(|| DenseMatrix::zeros(shape.0, shape.1))
    }

    /// Reverse pass from a scalar `loss` node.
    ///
    /// After it returns, every node that (a) can reach `loss` and (b) depends
    /// on a trainable leaf holds `d loss / d node` in its gradient slot.
    /// Leaf gradients accumulate across repeated backward calls (until
    /// [`Graph::zero_grads`]); interior gradients are recomputed per call.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.node(loss).value.shape();
        if shape != (1, 1) {
            return Err(Error::config(format!(
                "backward requires a scalar (1x1) loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        if !self.needs(loss) {
            // Loss does not depend on any trainable leaf; nothing to do.
            return Ok(());
        }

        // Interior gradients are per-pass quantities; only leaves carry
        // accumulation across calls.
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }

        // Mark nodes that can both reach the loss and influence a trainable
        // leaf; everything else is skipped.
        let mut active = vec![false; self.nodes.len()];
        let mut stack = vec![loss];
        active[loss.0] = true;
        while let Some(id) = stack.pop() {
            for parent in parent_ids(&self.nodes[id.0].op) {
                if self.needs(parent) && !active[parent.0] {
                    active[parent.0] = true;
                    stack.push(parent);
                }
            }
        }

        self.accumulate(loss, DenseMatrix::from_vec(1, 1, vec![1.0])?)?;

        // Creation order is topological; replay in reverse.
        for idx in (0..=loss.0).rev() {
            if !active[idx] || self.nodes[idx].grad.is_none() {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            let upstream = self.nodes[idx].grad.take().expect("grad present");
            self.propagate(idx, &op, &upstream)?;
            self.nodes[idx].grad = Some(upstream);
        }
        Ok(())
    }

    fn propagate(&mut self, out: usize, op: &Op, upstream: &DenseMatrix) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let mut ga = self.take_grad_or_zeros(a);
                    dgemm_view(1.0, upstream, false, &self.nodes[b.0].value, true, 1.0, &mut ga);
                    self.nodes[a.0].grad = Some(ga);
                }
                if self.needs(b) {
                    let mut gb = self.take_grad_or_zeros(b);
                    dgemm_view(1.0, &self.nodes[a.0].value, true, upstream, false, 1.0, &mut gb);
                    self.nodes[b.0].grad = Some(gb);
                }
            }
            Op::Add(a, b) => {
                if self.needs(a) {
                    self.accumulate(a, upstream.clone())?;
                }
                if self.needs(b) {
                    self.accumulate(b, upstream.clone())?;
                }
            }
            Op::Sub(a, b) => {
                if self.needs(a) {
                    self.accumulate(a, upstream.clone())?;
                }
                if self.needs(b) {
                    self.accumulate(b, upstream.scale(-1.0))?;
                }
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let contrib = upstream.hadamard(&self.nodes[b.0].value)?;
                    self.accumulate(a, contrib)?;
                }
                if self.needs(b) {
                    let contrib = upstream.hadamard(&self.nodes[a.0].value)?;
                    self.accumulate(b, contrib)?;
                }
            }
            Op::Affine(x, a) => {
                if self.needs(x) {
                    self.accumulate(x, upstream.scale(a))?;
                }
            }
            Op::Sigmoid(x) => {
                if self.needs(x) {
                    let contrib =
                        zip3(upstream, &self.nodes[out].value, |u, s| u * s * (1.0 - s));
                    self.accumulate(x, contrib)?;
                }
            }
            Op::Tanh(x) => {
                if self.needs(x) {
                    let contrib =
                        zip3(upstream, &self.nodes[out].value, |u, t| u * (1.0 - t * t));
                    self.accumulate(x, contrib)?;
                }
            }
            Op::Relu(x) => {
                if self.needs(x) {
                    let contrib = zip3(upstream, &self.nodes[x.0].value, |u, v| {
                        if v > 0.0 {
                            u
                        } else {
                            0.0
                        }
                    });
                    self.accumulate(x, contrib)?;
                }
            }
            Op::Exp(x) => {
                if self.needs(x) {
                    let contrib = upstream.hadamard(&self.nodes[out].value)?;
                    self.accumulate(x, contrib)?;
                }
            }
            Op::Softplus(x) => {
                if self.needs(x) {
                    let contrib =
                        zip3(upstream, &self.nodes[x.0].value, |u, v| u * sigmoid_scalar(v));
                    self.accumulate(x, contrib)?;
                }
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols();
                if self.needs(a) {
                    let contrib = upstream.slice_cols(0, ca)?;
                    self.accumulate(a, contrib)?;
                }
                if self.needs(b) {
                    let contrib = upstream.slice_cols(ca, upstream.cols())?;
                    self.accumulate(b, contrib)?;
                }
            }
            Op::AddRowBias(x, bias) => {
                if self.needs(x) {
                    self.accumulate(x, upstream.clone())?;
                }
                if self.needs(bias) {
                    let mut sums = DenseMatrix::zeros(1, upstream.cols());
                    for i in 0..upstream.rows() {
                        for j in 0..upstream.cols() {
                            let v = sums.get(0, j) + upstream.get(i, j);
                            sums.set(0, j, v);
                        }
                    }
                    self.accumulate(bias, sums)?;
                }
            }
            Op::Transpose(x) => {
                if self.needs(x) {
                    self.accumulate(x, upstream.transpose())?;
                }
            }
            Op::Sum(x) => {
                if self.needs(x) {
                    let shape = self.nodes[x.0].value.shape();
                    let contrib = DenseMatrix::filled(shape.0, shape.1, upstream.get(0, 0));
                    self.accumulate(x, contrib)?;
                }
            }
        }
        Ok(())
    }
}

/// Entrywise combine of two equal-shape matrices (shapes guaranteed by
/// construction of the ops that call this).
fn zip3(a: &DenseMatrix, b: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
    debug_assert_eq!(a.shape(), b.shape());
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    let mut out = DenseMatrix::zeros(a.rows(), a.cols());
    out.data_mut().copy_from_slice(&data);
    out
}

fn parent_ids(op: &Op) -> Vec<NodeId> {
    match *op {
        Op::Leaf => vec![],
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::ConcatCols(a, b)
        | Op::AddRowBias(a, b) => vec![a, b],
        Op::Affine(x, _)
        | Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::Relu(x)
        | Op::Exp(x)
        | Op::Softplus(x)
        | Op::Transpose(x)
        | Op::Sum(x) => vec![x],
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus_scalar(x: f64) -> f64 {
    // ln(1+e^x) = max(x,0) + ln(1+e^{-|x|})
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
