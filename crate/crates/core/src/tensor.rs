//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! Forward values are computed eagerly as ops are recorded; `backward`
//! walks the tape once and accumulates gradients into every node that
//! (transitively) depends on a trainable leaf. The op set is exactly what
//! the stub language model needs: affine maps, tanh, masked row softmax,
//! row/column concatenation and slicing, and a mean cross-entropy head.

use ndarray::{concatenate, s, Array2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// C = A · B
    MatMul(NodeId, NodeId),
    /// C = A · Bᵀ
    MatMulBT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// Adds a 1×d bias row to every row of A.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    SoftmaxRows(NodeId),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    /// Mean negative log-likelihood of `targets` under row-wise softmax.
    CrossEntropyMean(NodeId, Vec<usize>),
}

struct Node {
    value: Array2<f64>,
    grad: Option<Array2<f64>>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable input; receives a gradient after `backward`.
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Frozen input; gradients are never propagated into it.
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMul(a, b), rg)
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::MatMulBT(a, b), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let rg = self.requires(a) || self.requires(b);
        self.push(value, Op::Add(a, b), rg)
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let value = &self.nodes[a.0].value + &self.nodes[bias.0].value;
        let rg = self.requires(a) || self.requires(bias);
        self.push(value, Op::AddRow(a, bias), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a.0].value * c;
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        let rg = self.requires(a);
        self.push(value, Op::Tanh(a), rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let value = softmax_rows(&self.nodes[a.0].value);
        let rg = self.requires(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let value = concatenate(Axis(0), &views).expect("compatible widths");
        let rg = parts.iter().any(|p| self.requires(*p));
        self.push(value, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[a.0]
            .value
            .slice(s![start..start + len, ..])
            .to_owned();
        let rg = self.requires(a);
        self.push(value, Op::SliceRows(a, start, len), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let value = self.nodes[a.0]
            .value
            .slice(s![.., start..start + len])
            .to_owned();
        let rg = self.requires(a);
        self.push(value, Op::SliceCols(a, start, len), rg)
    }

    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: Vec<usize>) -> NodeId {
        let probs = softmax_rows(&self.nodes[logits.0].value);
        debug_assert_eq!(probs.nrows(), targets.len());
        let total: f64 = targets
            .iter()
            .enumerate()
            .map(|(row, &t)| -probs[[row, t]].max(f64::MIN_POSITIVE).ln())
            .sum();
        let value = Array2::from_elem((1, 1), total / targets.len() as f64);
        let rg = self.requires(logits);
        self.push(value, Op::CrossEntropyMean(logits, targets), rg)
    }

    /// Accumulates gradients of `loss` (a 1×1 node) into all trainable
    /// ancestors.
    pub fn backward(&mut self, loss: NodeId) {
        assert_eq!(self.nodes[loss.0].value.dim(), (1, 1), "loss must be scalar");
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            if matches!(op, Op::Leaf) {
                // Leaves keep their gradient for the caller.
                self.nodes[idx].grad = Some(grad);
                continue;
            }
            match op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let d = grad.dot(&self.nodes[b.0].value.t());
                        self.accumulate(a, d);
                    }
                    if self.requires(b) {
                        let d = self.nodes[a.0].value.t().dot(&grad);
                        self.accumulate(b, d);
                    }
                }
                Op::MatMulBT(a, b) => {
                    if self.requires(a) {
                        let d = grad.dot(&self.nodes[b.0].value);
                        self.accumulate(a, d);
                    }
                    if self.requires(b) {
                        let d = grad.t().dot(&self.nodes[a.0].value);
                        self.accumulate(b, d);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires(a) {
                        self.accumulate(a, grad.clone());
                    }
                    if self.requires(b) {
                        self.accumulate(b, grad.clone());
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.requires(bias) {
                        let d = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.accumulate(bias, d);
                    }
                    if self.requires(a) {
                        self.accumulate(a, grad);
                    }
                }
                Op::Scale(a, c) => {
                    if self.requires(a) {
                        self.accumulate(a, grad * c);
                    }
                }
                Op::Tanh(a) => {
                    if self.requires(a) {
                        let y = &self.nodes[idx].value;
                        let d = &grad * &(1.0 - y * y);
                        self.accumulate(a, d);
                    }
                }
                Op::SoftmaxRows(a) => {
                    if self.requires(a) {
                        let y = &self.nodes[idx].value;
                        let weighted = (&grad * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                        let d = y * &(&grad - &weighted);
                        self.accumulate(a, d);
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for part in parts {
                        let rows = self.nodes[part.0].value.nrows();
                        if self.requires(part) {
                            let d = grad.slice(s![row..row + rows, ..]).to_owned();
                            self.accumulate(part, d);
                        }
                        row += rows;
                    }
                }
                Op::SliceRows(a, start, len) => {
                    if self.requires(a) {
                        let mut d = Array2::zeros(self.nodes[a.0].value.dim());
                        d.slice_mut(s![start..start + len, ..]).assign(&grad);
                        self.accumulate(a, d);
                    }
                }
                Op::SliceCols(a, start, len) => {
                    if self.requires(a) {
                        let mut d = Array2::zeros(self.nodes[a.0].value.dim());
                        d.slice_mut(s![.., start..start + len]).assign(&grad);
                        self.accumulate(a, d);
                    }
                }
                Op::CrossEntropyMean(logits, targets) => {
                    if self.requires(logits) {
                        let upstream = grad[[0, 0]] / targets.len() as f64;
                        let mut d = softmax_rows(&self.nodes[logits.0].value);
                        for (row, &t) in targets.iter().enumerate() {
                            d[[row, t]] -= 1.0;
                        }
                        self.accumulate(logits, d * upstream);
                    }
                }
            }
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: Array2<f64>) {
        match &mut self.nodes[id.0].grad {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

/// Numerically stable row-wise softmax; fully masked entries (-inf or very
/// negative) come out as exact zeros.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
