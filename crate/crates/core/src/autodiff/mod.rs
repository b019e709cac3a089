//! Dense reverse-mode differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] records every operation eagerly. [`Tensor`] is a cheap handle
//! into the tape; calling [`Tape::backward`] on a scalar walks the tape in
//! reverse creation order (a valid topological order) and accumulates
//! gradients into the leaves that require them.

mod nn;
mod params;

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

pub use nn::{LayerNormParams, LinearParams, TransformerBlock};
pub use params::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, CheckpointMeta, ParamStore,
    Parameter, CHECKPOINT_MAGIC,
};

pub const SELU_ALPHA: f64 = 1.6732632423543772;
pub const SELU_SCALE: f64 = 1.0507009873554805;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Selu(usize),
    Sigmoid(usize),
    Sum(usize),
    ColumnSum(usize),
    GroupRowSum(usize, usize),
    RowScale(usize, Rc<Vec<f64>>),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Matrix, inv_std: Vec<f64> },
    Attention { q: usize, k: usize, v: usize, mask: Rc<Vec<bool>>, group: usize, scale: f64, probs: Matrix },
    MultiLabelLoss { logits: usize, targets: Vec<f64>, weights: Vec<f64>, eps: f64 },
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor#{} {:?}", self.id, self.tape.nodes.borrow()[self.id].value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&self, value: Matrix) -> Tensor<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as data; no gradient is tracked.
    pub fn constant(&self, value: Matrix) -> Tensor<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, grad: None, op, requires_grad });
        Tensor { tape: self, id: nodes.len() - 1 }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Back-propagates from a `1x1` tensor, adding into every reachable
    /// gradient-tracking leaf. Calling it twice doubles the leaf gradients.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.shape() != (1, 1) {
            let (r, c) = nodes[loss.id].value.shape();
            return Err(Error::Shape(format!("backward needs a scalar loss, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Matrix>> = (0..=loss.id).map(|_| None).collect();
        adj[loss.id] = Some(Matrix::filled(1, 1, 1.0));
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[id].op {
                let node = &mut nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
                continue;
            }
            propagate(&nodes, id, &g, &mut adj)?;
        }
        Ok(())
    }
}

fn accumulate(nodes: &[Node], adj: &mut [Option<Matrix>], id: usize, g: Matrix) -> Result<()> {
    if !nodes[id].requires_grad {
        return Ok(());
    }
    match &mut adj[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Matrix, adj: &mut [Option<Matrix>]) -> Result<()> {
    let out = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                accumulate(nodes, adj, *a, g.matmul_t(val(*b))?)?;
            }
            if nodes[*b].requires_grad {
                accumulate(nodes, adj, *b, val(*a).t_matmul(g)?)?;
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, adj, *a, g.clone())?;
            accumulate(nodes, adj, *b, g.clone())?;
        }
        Op::Sub(a, b) => {
            accumulate(nodes, adj, *a, g.clone())?;
            accumulate(nodes, adj, *b, g.scale(-1.0))?;
        }
        Op::Mul(a, b) => {
            accumulate(nodes, adj, *a, g.zip_map(val(*b), |x, y| x * y)?)?;
            accumulate(nodes, adj, *b, g.zip_map(val(*a), |x, y| x * y)?)?;
        }
        Op::Scale(a, s) => accumulate(nodes, adj, *a, g.scale(*s))?,
        Op::AddRow(a, bias) => {
            accumulate(nodes, adj, *a, g.clone())?;
            accumulate(nodes, adj, *bias, column_sums(g))?;
        }
        Op::Selu(a) => {
            let d = g.zip_map(val(*a), |gi, x| gi * selu_grad(x))?;
            accumulate(nodes, adj, *a, d)?;
        }
        Op::Sigmoid(a) => {
            let d = g.zip_map(out, |gi, y| gi * y * (1.0 - y))?;
            accumulate(nodes, adj, *a, d)?;
        }
        Op::Sum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, adj, *a, Matrix::filled(r, c, g[(0, 0)]))?;
        }
        Op::ColumnSum(a) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, adj, *a, Matrix::from_fn(r, c, |_, j| g[(0, j)]))?;
        }
        Op::GroupRowSum(a, group) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, adj, *a, Matrix::from_fn(r, c, |i, j| g[(i / group, j)]))?;
        }
        Op::RowScale(a, scales) => {
            let d = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * scales[i]);
            accumulate(nodes, adj, *a, d)?;
        }
        Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
            let gam = val(*gamma);
            let (r, c) = xhat.shape();
            if nodes[*gamma].requires_grad {
                let mut dg = Matrix::zeros(1, c);
                for i in 0..r {
                    for j in 0..c {
                        dg[(0, j)] += g[(i, j)] * xhat[(i, j)];
                    }
                }
                accumulate(nodes, adj, *gamma, dg)?;
            }
            if nodes[*beta].requires_grad {
                accumulate(nodes, adj, *beta, column_sums(g))?;
            }
            if nodes[*x].requires_grad {
                let mut dx = Matrix::zeros(r, c);
                let n = c as f64;
                for i in 0..r {
                    let dxhat: Vec<f64> = (0..c).map(|j| g[(i, j)] * gam[(0, j)]).collect();
                    let sum: f64 = dxhat.iter().sum();
                    let sum_xhat: f64 = (0..c).map(|j| dxhat[j] * xhat[(i, j)]).sum();
                    for j in 0..c {
                        dx[(i, j)] = inv_std[i] / n * (n * dxhat[j] - sum - xhat[(i, j)] * sum_xhat);
                    }
                }
                accumulate(nodes, adj, *x, dx)?;
            }
        }
        Op::Attention { q, k, v, mask, group, scale, probs } => {
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            let rows = qv.rows();
            let mut dq = Matrix::zeros(rows, qv.cols());
            let mut dk = Matrix::zeros(rows, kv.cols());
            let mut dv = Matrix::zeros(rows, vv.cols());
            for i in 0..rows {
                if !mask[i] {
                    continue;
                }
                let base = i / group * group;
                let gi = g.row(i);
                let dp: Vec<f64> = (0..*group).map(|t| dot(gi, vv.row(base + t))).collect();
                let weighted: f64 = (0..*group).map(|t| probs[(i, t)] * dp[t]).sum();
                for t in 0..*group {
                    let p = probs[(i, t)];
                    if p == 0.0 {
                        continue;
                    }
                    let j = base + t;
                    for (d, &x) in dv.row_mut(j).iter_mut().zip(gi) {
                        *d += p * x;
                    }
                    let ds = p * (dp[t] - weighted) * scale;
                    for (d, &x) in dq.row_mut(i).iter_mut().zip(kv.row(j)) {
                        *d += ds * x;
                    }
                    for (d, &x) in dk.row_mut(j).iter_mut().zip(qv.row(i)) {
                        *d += ds * x;
                    }
                }
            }
            accumulate(nodes, adj, *q, dq)?;
            accumulate(nodes, adj, *k, dk)?;
            accumulate(nodes, adj, *v, dv)?;
        }
        Op::MultiLabelLoss { logits, targets, weights, eps } => {
            let z = val(*logits);
            let o = targets.len() as f64;
            let d = Matrix::from_fn(1, z.cols(), |_, j| {
                g[(0, 0)] * weights[j] * loss_term_grad(z[(0, j)], targets[j], *eps) / o
            });
            accumulate(nodes, adj, *logits, d)?;
        }
    }
    Ok(())
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for i in 0..m.rows() {
        for (o, x) in out.row_mut(0).iter_mut().zip(m.row(i)) {
            *o += x;
        }
    }
    out
}

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE * x
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_SCALE
    } else {
        SELU_SCALE * SELU_ALPHA * x.exp()
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cross-entropy plus log-ratio penalty for one descriptor, from its logit.
pub fn loss_term_from_logit(z: f64, t: f64, eps: f64) -> f64 {
    let bce = t * softplus(-z) + (1.0 - t) * softplus(z);
    let reg = ((sigmoid(z) + eps).ln() - (t + eps).ln()).abs();
    bce + reg
}

fn loss_term_grad(z: f64, t: f64, eps: f64) -> f64 {
    let s = sigmoid(z);
    let diff = (s + eps).ln() - (t + eps).ln();
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    (s - t) + sign * s * sigmoid(-z) / (s + eps)
}

impl<'t> Tensor<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Borrow of the stored value; release it before recording further ops.
    pub fn value_ref(&self) -> Ref<'t, Matrix> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn scalar(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[(0, 0)]
    }

    pub fn grad(&self) -> Option<Matrix> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, f: impl FnOnce(&Matrix) -> Result<Matrix>) -> Result<Tensor<'t>> {
        let value = f(&self.value_ref())?;
        let req = self.tape.requires(&[self.id]);
        Ok(self.tape.push(value, op, req))
    }

    fn binary(
        self,
        other: Tensor<'t>,
        op: Op,
        f: impl FnOnce(&Matrix, &Matrix) -> Result<Matrix>,
    ) -> Result<Tensor<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        let req = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op, req))
    }

    pub fn matmul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.zip_map(b, |x, y| x + y))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.zip_map(b, |x, y| x - y))
    }

    /// Elementwise product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| a.zip_map(b, |x, y| x * y))
    }

    pub fn scale(self, s: f64) -> Tensor<'t> {
        self.unary(Op::Scale(self.id, s), |a| Ok(a.scale(s))).expect("infallible")
    }

    /// Adds a `1 x c` row vector to every row.
    pub fn add_row(self, bias: Tensor<'t>) -> Result<Tensor<'t>> {
        self.binary(bias, Op::AddRow(self.id, bias.id), |a, b| {
            if b.shape() != (1, a.cols()) {
                return Err(Error::Shape(format!(
                    "row bias {}x{} does not fit {}x{}",
                    b.rows(),
                    b.cols(),
                    a.rows(),
                    a.cols()
                )));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + b[(0, j)]))
        })
    }

    pub fn selu(self) -> Tensor<'t> {
        self.unary(Op::Selu(self.id), |a| Ok(a.map(selu))).expect("infallible")
    }

    pub fn sigmoid(self) -> Tensor<'t> {
        self.unary(Op::Sigmoid(self.id), |a| Ok(a.map(sigmoid))).expect("infallible")
    }

    /// Sum of all entries as a `1x1` tensor.
    pub fn sum(self) -> Tensor<'t> {
        self.unary(Op::Sum(self.id), |a| Ok(Matrix::filled(1, 1, a.sum()))).expect("infallible")
    }

    /// `1 x c` vector of column sums.
    pub fn column_sum(self) -> Tensor<'t> {
        self.unary(Op::ColumnSum(self.id), |a| Ok(column_sums(a))).expect("infallible")
    }

    /// Sums consecutive blocks of `group` rows: `(g*r) x c -> r x c`.
    pub fn group_row_sum(self, group: usize) -> Result<Tensor<'t>> {
        self.unary(Op::GroupRowSum(self.id, group), |a| {
            if group == 0 || a.rows() % group != 0 {
                return Err(Error::Shape(format!("{} rows do not split into groups of {group}", a.rows())));
            }
            let mut out = Matrix::zeros(a.rows() / group, a.cols());
            for i in 0..a.rows() {
                for (o, x) in out.row_mut(i / group).iter_mut().zip(a.row(i)) {
                    *o += x;
                }
            }
            Ok(out)
        })
    }

    /// Multiplies row `i` by `scales[i]` (constant, not differentiated).
    pub fn row_scale(self, scales: Rc<Vec<f64>>) -> Result<Tensor<'t>> {
        let s2 = scales.clone();
        self.unary(Op::RowScale(self.id, scales), move |a| {
            if s2.len() != a.rows() {
                return Err(Error::Shape(format!("{} row scales for {} rows", s2.len(), a.rows())));
            }
            Ok(Matrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] * s2[i]))
        })
    }

    /// Per-row layer normalization with learned `1 x c` gain and shift.
    pub fn layer_norm(self, gamma: Tensor<'t>, beta: Tensor<'t>) -> Result<Tensor<'t>> {
        let (value, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let (x, g, b) = (&nodes[self.id].value, &nodes[gamma.id].value, &nodes[beta.id].value);
            let c = x.cols();
            if g.shape() != (1, c) || b.shape() != (1, c) {
                return Err(Error::Shape(format!("layer norm parameters must be 1x{c}")));
            }
            let mut xhat = Matrix::zeros(x.rows(), c);
            let mut inv_std = Vec::with_capacity(x.rows());
            for i in 0..x.rows() {
                let row = x.row(i);
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for (h, v) in xhat.row_mut(i).iter_mut().zip(row) {
                    *h = (v - mean) * inv;
                }
                inv_std.push(inv);
            }
            let value = Matrix::from_fn(x.rows(), c, |i, j| xhat[(i, j)] * g[(0, j)] + b[(0, j)]);
            (value, xhat, inv_std)
        };
        let req = self.tape.requires(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(value, Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std }, req))
    }
}

/// Scaled dot-product attention, independently within consecutive blocks of
/// `group` rows.
///
/// Rows with `mask[i] == false` neither attend nor are attended to, and their
/// output is zero. `group == rows` gives ordinary single-sequence attention.
pub fn softmax_attention<'t>(
    q: Tensor<'t>,
    k: Tensor<'t>,
    v: Tensor<'t>,
    mask: Rc<Vec<bool>>,
    group: usize,
) -> Result<Tensor<'t>> {
    let tape = q.tape;
    let (value, probs, scale) = {
        let nodes = tape.nodes.borrow();
        let (qv, kv, vv) = (&nodes[q.id].value, &nodes[k.id].value, &nodes[v.id].value);
        let rows = qv.rows();
        if kv.rows() != rows || vv.rows() != rows {
            return Err(Error::Shape(format!(
                "attention row counts differ: q {}, k {}, v {}",
                rows,
                kv.rows(),
                vv.rows()
            )));
        }
        if qv.cols() != kv.cols() {
            return Err(Error::Shape(format!("query width {} vs key width {}", qv.cols(), kv.cols())));
        }
        if qv.cols() == 0 {
            return Err(Error::Shape("attention key dimension is zero".into()));
        }
        if mask.len() != rows || group == 0 || rows % group != 0 {
            return Err(Error::Shape(format!("mask of {} / group {group} inconsistent with {rows} rows", mask.len())));
        }
        let scale = 1.0 / (qv.cols() as f64).sqrt();
        let mut probs = Matrix::zeros(rows, group);
        let mut out = Matrix::zeros(rows, vv.cols());
        for i in 0..rows {
            if !mask[i] {
                continue;
            }
            let base = i / group * group;
            let logits: Vec<f64> = (0..group)
                .map(|t| if mask[base + t] { dot(qv.row(i), kv.row(base + t)) * scale } else { f64::NEG_INFINITY })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> =
                logits.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() }).collect();
            let total: f64 = exps.iter().sum();
            for t in 0..group {
                let p = exps[t] / total;
                probs[(i, t)] = p;
                if p != 0.0 {
                    for (o, x) in out.row_mut(i).iter_mut().zip(vv.row(base + t)) {
                        *o += p * x;
                    }
                }
            }
        }
        (out, probs, scale)
    };
    let req = tape.requires(&[q.id, k.id, v.id]);
    Ok(tape.push(value, Op::Attention { q: q.id, k: k.id, v: v.id, mask, group, scale, probs }, req))
}

/// Weighted multi-label loss from a `1 x o` row of logits.
///
/// Mean over descriptors of `w_i * (BCE + |ln(p_i + eps) - ln(t_i + eps)|)`
/// with `p = sigmoid(z)`, evaluated in a numerically stable form.
pub fn multilabel_loss<'t>(logits: Tensor<'t>, targets: &[f64], weights: &[f64], eps: f64) -> Result<Tensor<'t>> {
    let value = {
        let z = logits.value_ref();
        if z.rows() != 1 || z.cols() != targets.len() || weights.len() != targets.len() {
            return Err(Error::Shape(format!(
                "loss over {}x{} logits with {} targets and {} weights",
                z.rows(),
                z.cols(),
                targets.len(),
                weights.len()
            )));
        }
        if targets.is_empty() {
            return Err(Error::Shape("loss needs at least one descriptor".into()));
        }
        let total: f64 = (0..z.cols()).map(|j| weights[j] * loss_term_from_logit(z[(0, j)], targets[j], eps)).sum();
        Matrix::filled(1, 1, total / targets.len() as f64)
    };
    let tape = logits.tape;
    let req = tape.requires(&[logits.id]);
    Ok(tape.push(
        value,
        Op::MultiLabelLoss { logits: logits.id, targets: targets.to_vec(), weights: weights.to_vec(), eps },
        req,
    ))
}

#[cfg(test)]
pub(crate) mod tests;
