//! Reverse-mode differentiation over dense matrices.
//!
//! A [`GradTape`] records every operation in execution order, so node indices
//! are already a topological order; [`GradTape::backward`] walks them once in
//! reverse and accumulates gradients additively.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::TensorError;
use crate::graph::Graph;
use crate::tensor::{gemm, Operand, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` inside the loss.
pub const BCE_CLAMP: f64 = 1e-12;

/// Handle of a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Non-learnable neighbor aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    #[default]
    Sum,
    Mean,
    Min,
}

/// Compressed neighbor lists of a graph (or of a batch of disjoint graphs).
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut targets = Vec::new();
        offsets.push(0);
        for l in lists {
            targets.extend_from_slice(l);
            offsets.push(targets.len());
        }
        Self { offsets, targets }
    }

    pub fn from_graph(g: &Graph) -> Self {
        Self::from_lists(g.adjacency())
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    RowSum(Var),
    Sum(Var),
    SegmentSum(Var, Arc<[usize]>),
    RowSelect(Var, Vec<usize>),
    RowDiff(Var, Vec<(usize, usize)>),
    Pool(Var, Arc<Adjacency>, PoolKind, Vec<usize>),
    Bce(Var, Vec<f64>),
    BceLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward/backward pass.
#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every tape value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; values the loss does not depend on get zeros.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let (r, c) = self.shapes.get(v.0).copied().unwrap_or((0, 0));
                Tensor::zeros(r, c)
            }
        }
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Learnable parameters pass `requires_grad = true`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn node(&self, v: Var) -> Result<&Node, TensorError> {
        self.nodes.get(v.0).ok_or(TensorError::UnknownVar(v.0))
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var], name: &'static str) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        self.push(out, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.add(&self.node(b)?.value)?;
        self.push(out, Op::Add(a, b), &[a, b], "add")
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_broadcast_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (&self.node(a)?.value, &self.node(b)?.value);
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast_row",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (x, y) in out.row_mut(r).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.push(out, Op::AddRow(a, b), &[a, b], "add_broadcast_row")
    }

    pub fn scalar_mul(&mut self, c: f64, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.scale(c);
        self.push(out, Op::Scale(a, c), &[a], "scalar_mul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.transpose();
        self.push(out, Op::Transpose(a), &[a], "transpose")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a], "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a], "sigmoid")
    }

    /// Elementwise absolute value; subgradient 0 at 0.
    pub fn abs(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.node(a)?.value.map(f64::abs);
        self.push(out, Op::Abs(a), &[a], "abs")
    }

    /// Column sums: `rows x cols -> 1 x cols`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let mut out = Tensor::zeros(1, av.cols());
        for r in 0..av.rows() {
            for (o, x) in out.data_mut().iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        self.push(out, Op::RowSum(a), &[a], "row_sum")
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = Tensor::scalar(self.node(a)?.value.sum());
        self.push(out, Op::Sum(a), &[a], "sum")
    }

    /// Per-segment row sums. `offsets` has `segments + 1` ascending entries
    /// ending at the row count; segment `s` spans rows `offsets[s]..offsets[s+1]`.
    pub fn segment_sum(&mut self, a: Var, offsets: Arc<[usize]>) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let bad = offsets.is_empty()
            || offsets[0] != 0
            || *offsets.last().unwrap() != av.rows()
            || offsets.windows(2).any(|w| w[0] > w[1]);
        if bad {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                left: av.shape(),
                right: (offsets.len(), 1),
            });
        }
        let mut out = Tensor::zeros(offsets.len() - 1, av.cols());
        for s in 0..offsets.len() - 1 {
            for r in offsets[s]..offsets[s + 1] {
                for (o, x) in out.row_mut(s).iter_mut().zip(av.row(r)) {
                    *o += x;
                }
            }
        }
        self.push(out, Op::SegmentSum(a, offsets), &[a], "segment_sum")
    }

    pub fn row_select(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let mut out = Tensor::zeros(indices.len(), av.cols());
        for (i, &r) in indices.iter().enumerate() {
            if r >= av.rows() {
                return Err(TensorError::RowOutOfRange { index: r, rows: av.rows() });
            }
            out.row_mut(i).copy_from_slice(av.row(r));
        }
        self.push(out, Op::RowSelect(a, indices.to_vec()), &[a], "row_select")
    }

    /// Single difference `a[i] - a[j]` as a `1 x cols` row.
    pub fn row_diff(&mut self, a: Var, i: usize, j: usize) -> Result<Var, TensorError> {
        self.row_pair_diff(a, &[(i, j)])
    }

    /// One output row `a[i] - a[j]` per pair.
    pub fn row_pair_diff(&mut self, a: Var, pairs: &[(usize, usize)]) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        let mut out = Tensor::zeros(pairs.len(), av.cols());
        for (k, &(i, j)) in pairs.iter().enumerate() {
            for r in [i, j] {
                if r >= av.rows() {
                    return Err(TensorError::RowOutOfRange { index: r, rows: av.rows() });
                }
            }
            for ((o, x), y) in out.row_mut(k).iter_mut().zip(av.row(i)).zip(av.row(j)) {
                *o = x - y;
            }
        }
        self.push(out, Op::RowDiff(a, pairs.to_vec()), &[a], "row_diff")
    }

    /// Row `v` of the output pools the rows of `a` at `v`'s neighbors. Nodes
    /// without neighbors pool to a zero row.
    pub fn neighbor_pool(&mut self, a: Var, adj: Arc<Adjacency>, kind: PoolKind) -> Result<Var, TensorError> {
        let av = &self.node(a)?.value;
        if adj.num_nodes() != av.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "neighbor_pool",
                left: av.shape(),
                right: (adj.num_nodes(), adj.num_nodes()),
            });
        }
        let cols = av.cols();
        let mut out = Tensor::zeros(av.rows(), cols);
        let mut argmin = Vec::new();
        if kind == PoolKind::Min {
            argmin = vec![usize::MAX; av.rows() * cols];
        }
        for v in 0..av.rows() {
            let nbrs = adj.neighbors(v);
            if nbrs.is_empty() {
                continue;
            }
            let row = out.row_mut(v);
            match kind {
                PoolKind::Sum | PoolKind::Mean => {
                    for &u in nbrs {
                        for (o, x) in row.iter_mut().zip(av.row(u)) {
                            *o += x;
                        }
                    }
                    if kind == PoolKind::Mean {
                        let inv = 1.0 / nbrs.len() as f64;
                        row.iter_mut().for_each(|o| *o *= inv);
                    }
                }
                PoolKind::Min => {
                    for c in 0..cols {
                        let mut best = nbrs[0];
                        for &u in &nbrs[1..] {
                            if av.get(u, c) < av.get(best, c) {
                                best = u;
                            }
                        }
                        row[c] = av.get(best, c);
                        argmin[v * cols + c] = best;
                    }
                }
            }
        }
        self.push(out, Op::Pool(a, adj, kind, argmin), &[a], "neighbor_pool")
    }

    /// Mean binary cross-entropy of an `N x 1` probability column against
    /// labels in {0, 1}.
    pub fn bce_loss(&mut self, p: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let pv = &self.node(p)?.value;
        if pv.cols() != 1 || pv.rows() != labels.len() || labels.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_loss",
                left: pv.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut total = 0.0;
        for (&x, &y) in pv.data().iter().zip(labels) {
            if !(0.0..=1.0).contains(&x) {
                return Err(TensorError::BceDomain(format!("probability {x} outside [0,1]")));
            }
            if y != 0.0 && y != 1.0 {
                return Err(TensorError::BceDomain(format!("label {y} not in {{0,1}}")));
            }
            let q = x.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        self.push(out, Op::Bce(p, labels.to_vec()), &[p], "bce_loss")
    }

    /// Mean BCE of `sigmoid(z)` computed from the logits `z` as
    /// `max(z,0) - y z + ln(1 + e^{-|z|})`; exact where probabilities saturate.
    pub fn bce_with_logits(&mut self, z: Var, labels: &[f64]) -> Result<Var, TensorError> {
        let zv = &self.node(z)?.value;
        if zv.cols() != 1 || zv.rows() != labels.len() || labels.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                left: zv.shape(),
                right: (labels.len(), 1),
            });
        }
        let mut total = 0.0;
        for (&x, &y) in zv.data().iter().zip(labels) {
            if y != 0.0 && y != 1.0 {
                return Err(TensorError::BceDomain(format!("label {y} not in {{0,1}}")));
            }
            total += x.max(0.0) - y * x + (-x.abs()).exp().ln_1p();
        }
        let out = Tensor::scalar(total / labels.len() as f64);
        self.push(out, Op::BceLogits(z, labels.to_vec()), &[z], "bce_with_logits")
    }

    /// Sign pattern of every ReLU and abs input on the tape; two evaluations
    /// with equal signatures lie on the same smooth piece.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::Abs(a) = node.op {
                sig.extend(self.nodes[a.0].value.data().iter().map(|&x| x > 0.0));
            }
        }
        sig
    }

    /// Reverse pass from a 1x1 `loss`. The tape can be consumed only once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::TapeConsumed);
        }
        let lv = &self.node(loss)?.value;
        if lv.shape() != (1, 1) {
            return Err(TensorError::NotScalar(lv.rows(), lv.cols()));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let shapes: Vec<_> = self.nodes.iter().map(|nd| nd.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::scalar(1.0));
        }

        for idx in (0..=loss.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    gemm(Operand::plain(up), Operand::transposed(val(*b)), g, 1.0);
                }
                if self.wants(*b) {
                    let g = slot(grads, *b, val(*b));
                    gemm(Operand::transposed(val(*a)), Operand::plain(up), g, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(*v) {
                        slot(grads, *v, val(*v)).add_assign(up);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(up);
                }
                if self.wants(*b) {
                    let g = slot(grads, *b, val(*b));
                    for r in 0..up.rows() {
                        for (o, x) in g.data_mut().iter_mut().zip(up.row(r)) {
                            *o += x;
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    for (o, x) in g.data_mut().iter_mut().zip(up.data()) {
                        *o += c * x;
                    }
                }
            }
            Op::Transpose(a) => {
                if self.wants(*a) {
                    slot(grads, *a, val(*a)).add_assign(&up.transpose());
                }
            }
            Op::Relu(a) => {
                if self.wants(*a) {
                    let x = val(*a);
                    let g = slot(grads, *a, x);
                    for ((o, u), xi) in g.data_mut().iter_mut().zip(up.data()).zip(x.data()) {
                        if *xi > 0.0 {
                            *o += u;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let s = &node.value;
                    let g = slot(grads, *a, val(*a));
                    for ((o, u), si) in g.data_mut().iter_mut().zip(up.data()).zip(s.data()) {
                        *o += u * si * (1.0 - si);
                    }
                }
            }
            Op::Abs(a) => {
                if self.wants(*a) {
                    let x = val(*a);
                    let g = slot(grads, *a, x);
                    for ((o, u), xi) in g.data_mut().iter_mut().zip(up.data()).zip(x.data()) {
                        if *xi > 0.0 {
                            *o += u;
                        } else if *xi < 0.0 {
                            *o -= u;
                        }
                    }
                }
            }
            Op::RowSum(a) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    for r in 0..g.rows() {
                        for (o, u) in g.row_mut(r).iter_mut().zip(up.data()) {
                            *o += u;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let u = up.item();
                    slot(grads, *a, val(*a)).data_mut().iter_mut().for_each(|o| *o += u);
                }
            }
            Op::SegmentSum(a, offsets) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    for s in 0..offsets.len() - 1 {
                        for r in offsets[s]..offsets[s + 1] {
                            for (o, u) in g.row_mut(r).iter_mut().zip(up.row(s)) {
                                *o += u;
                            }
                        }
                    }
                }
            }
            Op::RowSelect(a, idx) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    for (i, &r) in idx.iter().enumerate() {
                        for (o, u) in g.row_mut(r).iter_mut().zip(up.row(i)) {
                            *o += u;
                        }
                    }
                }
            }
            Op::RowDiff(a, pairs) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        for (o, u) in g.row_mut(i).iter_mut().zip(up.row(k)) {
                            *o += u;
                        }
                        for (o, u) in g.row_mut(j).iter_mut().zip(up.row(k)) {
                            *o -= u;
                        }
                    }
                }
            }
            Op::Pool(a, adj, kind, argmin) => {
                if self.wants(*a) {
                    let g = slot(grads, *a, val(*a));
                    let cols = g.cols();
                    for v in 0..adj.num_nodes() {
                        let nbrs = adj.neighbors(v);
                        if nbrs.is_empty() {
                            continue;
                        }
                        match kind {
                            PoolKind::Sum | PoolKind::Mean => {
                                let w = if *kind == PoolKind::Mean {
                                    1.0 / nbrs.len() as f64
                                } else {
                                    1.0
                                };
                                for &u in nbrs {
                                    for (o, x) in g.row_mut(u).iter_mut().zip(up.row(v)) {
                                        *o += w * x;
                                    }
                                }
                            }
                            PoolKind::Min => {
                                for c in 0..cols {
                                    let u = argmin[v * cols + c];
                                    let cur = g.get(u, c);
                                    g.set(u, c, cur + up.get(v, c));
                                }
                            }
                        }
                    }
                }
            }
            Op::BceLogits(z, labels) => {
                if self.wants(*z) {
                    let zv = val(*z);
                    let scale = up.item() / labels.len() as f64;
                    let g = slot(grads, *z, zv);
                    for ((o, &x), &y) in g.data_mut().iter_mut().zip(zv.data()).zip(labels) {
                        *o += scale * (sigmoid(x) - y);
                    }
                }
            }
            Op::Bce(p, labels) => {
                if self.wants(*p) {
                    let pv = val(*p);
                    let scale = up.item() / labels.len() as f64;
                    let g = slot(grads, *p, pv);
                    for ((o, &x), &y) in g.data_mut().iter_mut().zip(pv.data()).zip(labels) {
                        let q = x.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                        *o += scale * (q - y) / (q * (1.0 - q));
                    }
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Tensor>], v: Var, like: &Tensor) -> &'g mut Tensor {
    grads[v.0].get_or_insert_with(|| Tensor::zeros(like.rows(), like.cols()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Central-difference gradient estimate of `f` at `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], eps: f64) -> Result<Vec<f64>, TensorError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + eps;
        let plus = f(&theta);
        theta[i] = orig - eps;
        let minus = f(&theta);
        theta[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(TensorError::NonFinite { op: "finite_diff_grad" });
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut tape = GradTape::new();
        let a = tape.constant(t(&[vec![-1.0, 2.0]]));
        let r = tape.relu(a).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 2.0]);
        let z = tape.constant(t(&[vec![0.0]]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        let p = tape.constant(t(&[vec![0.5]]));
        let l = tape.bce_loss(p, &[1.0]).unwrap();
        assert_abs_diff_eq!(tape.value(l).item(), std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn sum_of_entries_gradient_is_ones() {
        let mut tape = GradTape::new();
        let w = tape.leaf(t(&[vec![1.0, -2.0], vec![3.5, 0.0]]), true);
        let l = tape.sum(w).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(w), Tensor::filled(2, 2, 1.0));
    }

    #[test]
    fn logistic_gradient_closed_form() {
        for (w0, x, y) in [(0.3, 1.7, 1.0), (-1.2, 0.4, 0.0), (2.0, -0.9, 1.0)] {
            let mut tape = GradTape::new();
            let w = tape.leaf(Tensor::scalar(w0), true);
            let xv = tape.constant(Tensor::scalar(x));
            let z = tape.matmul(xv, w).unwrap();
            let p = tape.sigmoid(z).unwrap();
            let l = tape.bce_loss(p, &[y]).unwrap();
            let g = tape.backward(l).unwrap().wrt(w).item();
            let expected = (sigmoid(w0 * x) - y) * x;
            assert_abs_diff_eq!(g, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = GradTape::new();
        let w = tape.leaf(Tensor::filled(2, 3, 1.0), true);
        let unused = tape.leaf(Tensor::filled(4, 1, 1.0), true);
        let l = tape.sum(w).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(4, 1));
    }

    #[test]
    fn backward_errors() {
        let mut tape = GradTape::new();
        let w = tape.leaf(Tensor::filled(2, 2, 1.0), true);
        assert_eq!(tape.backward(w).unwrap_err(), TensorError::NotScalar(2, 2));
        let l = tape.sum(w).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.backward(l).unwrap_err(), TensorError::TapeConsumed);
    }

    #[test]
    fn op_errors() {
        let mut tape = GradTape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
        assert!(tape.add_broadcast_row(a, b).is_err());
        let p = tape.constant(t(&[vec![1.5]]));
        assert!(matches!(tape.bce_loss(p, &[1.0]), Err(TensorError::BceDomain(_))));
        let q = tape.constant(t(&[vec![0.5]]));
        assert!(matches!(tape.bce_loss(q, &[0.5]), Err(TensorError::BceDomain(_))));
        let big = tape.constant(Tensor::filled(1, 1, 1e308));
        assert!(matches!(
            tape.scalar_mul(10.0, big),
            Err(TensorError::NonFinite { .. })
        ));
        assert!(tape.row_select(a, &[2]).is_err());
    }

    #[test]
    fn bce_clamps_saturated_probabilities() {
        let mut tape = GradTape::new();
        let p = tape.constant(t(&[vec![1.0], vec![0.0]]));
        let l = tape.bce_loss(p, &[0.0, 1.0]).unwrap();
        let v = tape.value(l).item();
        assert!(v.is_finite());
        assert_abs_diff_eq!(v, -(BCE_CLAMP).ln(), epsilon = 1e-3);
    }

    #[test]
    fn finite_differences_examples() {
        let g = finite_diff_grad(|th| th[0] * th[0], &[3.0], 1e-4).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-7);
        let g = finite_diff_grad(|_| 4.2, &[1.0, 2.0, 3.0], 1e-4).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(finite_diff_grad(|th| 1.0 / (th[0] - th[0]), &[1.0], 1e-3).is_err());
    }

    #[test]
    fn bce_chain_matches_finite_differences() {
        let x = 0.8;
        let y = 1.0;
        let f = |th: &[f64]| {
            let p = sigmoid(th[0] * x);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        };
        let w0 = -0.35;
        let fd = finite_diff_grad(f, &[w0], 1e-5).unwrap()[0];
        let mut tape = GradTape::new();
        let w = tape.leaf(Tensor::scalar(w0), true);
        let xv = tape.constant(Tensor::scalar(x));
        let z = tape.matmul(xv, w).unwrap();
        let p = tape.sigmoid(z).unwrap();
        let l = tape.bce_loss(p, &[y]).unwrap();
        let g = tape.backward(l).unwrap().wrt(w).item();
        assert!((g - fd).abs() / g.abs() < 1e-5);
    }

    #[test]
    fn logit_bce_matches_probability_bce_and_survives_saturation() {
        for (z0, y) in [(-0.35, 1.0), (1.2, 0.0), (0.0, 1.0)] {
            let mut a = GradTape::new();
            let za = a.leaf(Tensor::scalar(z0), true);
            let pa = a.sigmoid(za).unwrap();
            let la = a.bce_loss(pa, &[y]).unwrap();
            let (va, ga) = (a.value(la).item(), a.backward(la).unwrap().wrt(za).item());
            let mut b = GradTape::new();
            let zb = b.leaf(Tensor::scalar(z0), true);
            let lb = b.bce_with_logits(zb, &[y]).unwrap();
            let (vb, gb) = (b.value(lb).item(), b.backward(lb).unwrap().wrt(zb).item());
            assert_abs_diff_eq!(va, vb, epsilon = 1e-12);
            assert_abs_diff_eq!(ga, gb, epsilon = 1e-12);
        }
        // z = 40: sigmoid rounds to 1, the logit form keeps loss 40 and slope 1
        let mut t = GradTape::new();
        let z = t.leaf(Tensor::scalar(40.0), true);
        let l = t.bce_with_logits(z, &[0.0]).unwrap();
        assert_abs_diff_eq!(t.value(l).item(), 40.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.backward(l).unwrap().wrt(z).item(), 1.0, epsilon = 1e-12);
        let fd = finite_diff_grad(|th| th[0].max(0.0) + (-th[0].abs()).exp().ln_1p(), &[40.0], 1e-5).unwrap()[0];
        assert_abs_diff_eq!(fd, 1.0, epsilon = 1e-8);
    }

    fn composite(tape: &mut GradTape, w: &Tensor, kind: PoolKind) -> (Var, Var) {
        let adj = Arc::new(Adjacency::from_lists(&[vec![1, 2], vec![0], vec![0, 1], vec![]]));
        let x = tape.constant(t(&[
            vec![0.3, -0.2],
            vec![1.1, 0.4],
            vec![-0.7, 0.9],
            vec![0.2, 0.2],
        ]));
        let wv = tape.leaf(w.clone(), true);
        let h = tape.matmul(x, wv).unwrap();
        let p = tape.neighbor_pool(h, adj, kind).unwrap();
        let s = tape.add(h, p).unwrap();
        let a = tape.abs(s).unwrap();
        let seg = tape.segment_sum(a, Arc::from(vec![0, 2, 4])).unwrap();
        let d = tape.row_pair_diff(s, &[(0, 1), (2, 3)]).unwrap();
        let dt = tape.transpose(d).unwrap();
        let sel = tape.row_select(dt, &[1]).unwrap();
        let c = tape.row_sum(seg).unwrap();
        let e = tape.matmul(sel, d).unwrap();
        let tot = tape.sum(e).unwrap();
        let tc = tape.sum(c).unwrap();
        let l = tape.add(tot, tc).unwrap();
        (wv, l)
    }

    #[test]
    fn composite_ops_match_finite_differences() {
        let w = t(&[vec![0.5, -1.3, 0.7], vec![0.25, 0.9, -0.4]]);
        for kind in [PoolKind::Sum, PoolKind::Mean, PoolKind::Min] {
            let mut tape = GradTape::new();
            let (wv, l) = composite(&mut tape, &w, kind);
            let g = tape.backward(l).unwrap().wrt(wv);
            let fd = finite_diff_grad(
                |th| {
                    let mut tape = GradTape::new();
                    let w = Tensor::from_vec(2, 3, th.to_vec()).unwrap();
                    let (_, l) = composite(&mut tape, &w, kind);
                    tape.value(l).item()
                },
                w.data(),
                1e-6,
            )
            .unwrap();
            for (a, n) in g.data().iter().zip(&fd) {
                assert!((a - n).abs() < 1e-6, "{kind:?}: {a} vs {n}");
            }
        }
    }
}
