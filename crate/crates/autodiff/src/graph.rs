//! Tape-based computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so every node's inputs precede it
//! and a single reverse sweep over the tape visits each node exactly once.
//!
//! Shape rules (all tensors are 2-D `rows × cols` unless noted):
//!
//! | op                 | inputs                               | output            |
//! |--------------------|--------------------------------------|-------------------|
//! | `MatMul`           | `m×k`, `k×n`                         | `m×n`             |
//! | `Add`              | `a`, `a` or `a`, `[cols(a)]` (bias)  | shape of `a`      |
//! | `Sub`, `Mul`       | `a`, `a`                             | shape of `a`      |
//! | `Scale(c)`         | any                                  | same              |
//! | `Relu/Gelu/Tanh`   | any                                  | same              |
//! | `SoftmaxLastAxis`  | any                                  | same              |
//! | `LayerNorm`        | `r×c`, gain `[c]`, bias `[c]`        | `r×c`             |
//! | `Conv1d`           | `L×Cin`, kernel `K×Cin×Cout`, K odd  | `L×Cout` ("same") |
//! | `MaxPool1dStride2` | `L×C`                                | `ceil(L/2)×C`     |
//! | `MseLoss`          | `a`, `a`                             | `[1]`             |
//! | `Transpose`        | `r×c`                                | `c×r`             |
//! | `SliceRows/Cols`   | `r×c`                                | sub-block         |
//! | `ConcatCols`       | `r×c1`, `r×c2`, ...                  | `r×Σc`            |
//! | `GatherRows(idx)`  | `r×c`                                | `len(idx)×c`      |
//! | `ScatterRows(idx)` | base `r×c`, rows `len(idx)×c`        | `r×c`             |
//! | `MeanRows{rows}`   | `r×c`                                | `rows×c`          |
//! | `Sum`, `Mean`      | any                                  | `[1]`             |

use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::kernels::gemm;
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds understood by [`Graph::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Relu,
    /// tanh approximation of GELU.
    Gelu,
    Tanh,
    SoftmaxLastAxis,
    LayerNorm {
        eps: f64,
    },
    Conv1d,
    /// Kernel 3, stride 2, padding 1: halves the time axis with ceil semantics.
    MaxPool1dStride2,
    MseLoss,
    Transpose,
    SliceRows {
        start: usize,
        len: usize,
    },
    SliceCols {
        start: usize,
        len: usize,
    },
    ConcatCols,
    GatherRows(Vec<usize>),
    ScatterRows(Vec<usize>),
    MeanRows {
        rows: usize,
    },
    Sum,
    Mean,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "elementwise-mul",
            OpKind::Scale(_) => "scale",
            OpKind::Relu => "relu",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::SoftmaxLastAxis => "softmax-last-axis",
            OpKind::LayerNorm { .. } => "layer-norm",
            OpKind::Conv1d => "conv1d",
            OpKind::MaxPool1dStride2 => "maxpool1d-stride2",
            OpKind::MseLoss => "mse-loss",
            OpKind::Transpose => "transpose",
            OpKind::SliceRows { .. } => "slice-rows",
            OpKind::SliceCols { .. } => "slice-cols",
            OpKind::ConcatCols => "concat-cols",
            OpKind::GatherRows(_) => "gather-rows",
            OpKind::ScatterRows(_) => "scatter-rows",
            OpKind::MeanRows { .. } => "mean-rows",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    Apply(OpKind, Vec<NodeId>),
}

/// Values cached by the forward pass for use in backward.
#[derive(Clone, Debug)]
enum Aux {
    None,
    Argmax(Vec<usize>),
    Norm { xhat: Vec<f64>, inv_std: Vec<f64> },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    aux: Aux,
}

/// Single-threaded computation tape.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the trainable leaves.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn mismatch(op: &OpKind, shapes: &[&Tensor]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op: op.name(),
        shapes: shapes.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

fn is_matrix(t: &Tensor) -> bool {
    t.rank() == 2
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
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

    /// A constant leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// A trainable leaf; [`Graph::backward`] reports a gradient for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            value,
            requires_grad: trainable,
            aux: Aux::None,
        });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    fn check_ids(&self, inputs: &[NodeId]) -> Result<()> {
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(id.0));
            }
        }
        Ok(())
    }

    /// Evaluate `kind` on `inputs` and record the result on the tape.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        self.check_ids(inputs)?;
        let (value, aux) = self.forward(&kind, inputs)?;
        if !value.all_finite() {
            return Err(AutodiffError::NonFinite(kind.name()));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op: Op::Apply(kind, inputs.to_vec()),
            value,
            requires_grad,
            aux,
        });
        Ok(id)
    }

    fn arity(kind: &OpKind, inputs: &[NodeId], expected: usize) -> Result<()> {
        if inputs.len() != expected {
            return Err(AutodiffError::Arity {
                op: kind.name(),
                expected,
                got: inputs.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, kind: &OpKind, inputs: &[NodeId]) -> Result<(Tensor, Aux)> {
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        let unary = |expected: usize| Self::arity(kind, inputs, expected);
        match kind {
            OpKind::MatMul => {
                unary(2)?;
                let (a, b) = (v(0), v(1));
                if !is_matrix(a) || !is_matrix(b) || a.cols() != b.rows() {
                    return Err(mismatch(kind, &[a, b]));
                }
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                let mut out = vec![0.0; m * n];
                gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
                Ok((Tensor::new(vec![m, n], out)?, Aux::None))
            }
            OpKind::Add => {
                unary(2)?;
                let (a, b) = (v(0), v(1));
                if a.shape() == b.shape() {
                    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                    Ok((Tensor::new(a.shape().to_vec(), data)?, Aux::None))
                } else if b.rank() == 1 && b.numel() == a.cols() {
                    let c = a.cols();
                    let mut data = a.data().to_vec();
                    for row in data.chunks_mut(c) {
                        for (x, y) in row.iter_mut().zip(b.data()) {
                            *x += y;
                        }
                    }
                    Ok((Tensor::new(a.shape().to_vec(), data)?, Aux::None))
                } else {
                    Err(mismatch(kind, &[a, b]))
                }
            }
            OpKind::Sub | OpKind::Mul => {
                unary(2)?;
                let (a, b) = (v(0), v(1));
                if a.shape() != b.shape() {
                    return Err(mismatch(kind, &[a, b]));
                }
                let data = if *kind == OpKind::Sub {
                    a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect()
                } else {
                    a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect()
                };
                Ok((Tensor::new(a.shape().to_vec(), data)?, Aux::None))
            }
            OpKind::Scale(c) => {
                unary(1)?;
                Ok((v(0).map(|x| x * c), Aux::None))
            }
            OpKind::Relu => {
                unary(1)?;
                Ok((v(0).map(|x| x.max(0.0)), Aux::None))
            }
            OpKind::Gelu => {
                unary(1)?;
                Ok((v(0).map(gelu), Aux::None))
            }
            OpKind::Tanh => {
                unary(1)?;
                Ok((v(0).map(f64::tanh), Aux::None))
            }
            OpKind::SoftmaxLastAxis => {
                unary(1)?;
                let a = v(0);
                let c = a.cols();
                let mut data = a.data().to_vec();
                for row in data.chunks_mut(c) {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for x in row.iter_mut() {
                        *x = (*x - max).exp();
                        total += *x;
                    }
                    for x in row.iter_mut() {
                        *x /= total;
                    }
                }
                Ok((Tensor::new(a.shape().to_vec(), data)?, Aux::None))
            }
            OpKind::LayerNorm { eps } => {
                unary(3)?;
                let (x, gain, bias) = (v(0), v(1), v(2));
                let c = x.cols();
                if gain.shape() != [c] || bias.shape() != [c] {
                    return Err(mismatch(kind, &[x, gain, bias]));
                }
                let rows = x.rows();
                let mut xhat = vec![0.0; x.numel()];
                let mut inv_std = vec![0.0; rows];
                let mut out = vec![0.0; x.numel()];
                for r in 0..rows {
                    let row = x.row(r);
                    let mean = row.iter().sum::<f64>() / c as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                    let is = 1.0 / (var + eps).sqrt();
                    inv_std[r] = is;
                    for j in 0..c {
                        let h = (row[j] - mean) * is;
                        xhat[r * c + j] = h;
                        out[r * c + j] = h * gain.data()[j] + bias.data()[j];
                    }
                }
                Ok((
                    Tensor::new(x.shape().to_vec(), out)?,
                    Aux::Norm { xhat, inv_std },
                ))
            }
            OpKind::Conv1d => {
                unary(2)?;
                let (x, w) = (v(0), v(1));
                if !is_matrix(x)
                    || w.rank() != 3
                    || w.shape()[1] != x.cols()
                    || w.shape()[0] % 2 == 0
                {
                    return Err(mismatch(kind, &[x, w]));
                }
                let (len, cin) = (x.rows(), x.cols());
                let (k, cout) = (w.shape()[0], w.shape()[2]);
                let pad = k / 2;
                let mut out = vec![0.0; len * cout];
                for tap in 0..k {
                    // out[t] += x[t + tap - pad] · w[tap], over the valid range of t
                    let lo = pad.saturating_sub(tap);
                    let hi = (len + pad).saturating_sub(tap).min(len);
                    if lo >= hi {
                        continue;
                    }
                    let src = lo + tap - pad;
                    let rows = hi - lo;
                    let wk = &w.data()[tap * cin * cout..(tap + 1) * cin * cout];
                    gemm(
                        rows,
                        cin,
                        cout,
                        &x.data()[src * cin..(src + rows) * cin],
                        false,
                        wk,
                        false,
                        &mut out[lo * cout..hi * cout],
                        true,
                    );
                }
                Ok((Tensor::new(vec![len, cout], out)?, Aux::None))
            }
            OpKind::MaxPool1dStride2 => {
                unary(1)?;
                let x = v(0);
                if !is_matrix(x) {
                    return Err(mismatch(kind, &[x]));
                }
                let (len, c) = (x.rows(), x.cols());
                let out_len = len.div_ceil(2);
                let mut out = vec![0.0; out_len * c];
                let mut arg = vec![0usize; out_len * c];
                for t in 0..out_len {
                    let lo = (2 * t).saturating_sub(1);
                    let hi = (2 * t + 1).min(len - 1);
                    for j in 0..c {
                        let mut best = lo;
                        for s in lo + 1..=hi {
                            if x.at(s, j) > x.at(best, j) {
                                best = s;
                            }
                        }
                        out[t * c + j] = x.at(best, j);
                        arg[t * c + j] = best;
                    }
                }
                Ok((Tensor::new(vec![out_len, c], out)?, Aux::Argmax(arg)))
            }
            OpKind::MseLoss => {
                unary(2)?;
                let (a, b) = (v(0), v(1));
                if a.shape() != b.shape() {
                    return Err(mismatch(kind, &[a, b]));
                }
                let sse: f64 = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                Ok((Tensor::scalar(sse / a.numel() as f64), Aux::None))
            }
            OpKind::Transpose => {
                unary(1)?;
                let a = v(0);
                if !is_matrix(a) {
                    return Err(mismatch(kind, &[a]));
                }
                let (r, c) = (a.rows(), a.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = a.data()[i * c + j];
                    }
                }
                Ok((Tensor::new(vec![c, r], out)?, Aux::None))
            }
            OpKind::SliceRows { start, len } => {
                unary(1)?;
                let a = v(0);
                if !is_matrix(a) || *len == 0 || start + len > a.rows() {
                    return Err(mismatch(kind, &[a]));
                }
                let c = a.cols();
                let data = a.data()[start * c..(start + len) * c].to_vec();
                Ok((Tensor::new(vec![*len, c], data)?, Aux::None))
            }
            OpKind::SliceCols { start, len } => {
                unary(1)?;
                let a = v(0);
                if !is_matrix(a) || *len == 0 || start + len > a.cols() {
                    return Err(mismatch(kind, &[a]));
                }
                let mut data = Vec::with_capacity(a.rows() * len);
                for r in 0..a.rows() {
                    data.extend_from_slice(&a.row(r)[*start..start + len]);
                }
                Ok((Tensor::new(vec![a.rows(), *len], data)?, Aux::None))
            }
            OpKind::ConcatCols => {
                if inputs.is_empty() {
                    return Err(AutodiffError::Arity {
                        op: kind.name(),
                        expected: 1,
                        got: 0,
                    });
                }
                let parts: Vec<&Tensor> = (0..inputs.len()).map(v).collect();
                let rows = parts[0].rows();
                if parts.iter().any(|p| !is_matrix(p) || p.rows() != rows) {
                    return Err(mismatch(kind, &parts));
                }
                let total: usize = parts.iter().map(|p| p.cols()).sum();
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for p in &parts {
                        data.extend_from_slice(p.row(r));
                    }
                }
                Ok((Tensor::new(vec![rows, total], data)?, Aux::None))
            }
            OpKind::GatherRows(idx) => {
                unary(1)?;
                let a = v(0);
                if !is_matrix(a) || idx.is_empty() || idx.iter().any(|&i| i >= a.rows()) {
                    return Err(mismatch(kind, &[a]));
                }
                let mut data = Vec::with_capacity(idx.len() * a.cols());
                for &i in idx {
                    data.extend_from_slice(a.row(i));
                }
                Ok((Tensor::new(vec![idx.len(), a.cols()], data)?, Aux::None))
            }
            OpKind::ScatterRows(idx) => {
                unary(2)?;
                let (base, rows) = (v(0), v(1));
                let mut seen = vec![false; base.rows()];
                let distinct = idx
                    .iter()
                    .all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true));
                if !is_matrix(base)
                    || !is_matrix(rows)
                    || rows.rows() != idx.len()
                    || rows.cols() != base.cols()
                    || !distinct
                {
                    return Err(mismatch(kind, &[base, rows]));
                }
                let c = base.cols();
                let mut data = base.data().to_vec();
                for (k, &i) in idx.iter().enumerate() {
                    data[i * c..(i + 1) * c].copy_from_slice(rows.row(k));
                }
                Ok((Tensor::new(base.shape().to_vec(), data)?, Aux::None))
            }
            OpKind::MeanRows { rows } => {
                unary(1)?;
                let a = v(0);
                if !is_matrix(a) || *rows == 0 {
                    return Err(mismatch(kind, &[a]));
                }
                let c = a.cols();
                let mut mean = vec![0.0; c];
                for r in 0..a.rows() {
                    for (m, x) in mean.iter_mut().zip(a.row(r)) {
                        *m += x;
                    }
                }
                let n = a.rows() as f64;
                mean.iter_mut().for_each(|m| *m /= n);
                Ok((Tensor::new(vec![*rows, c], mean.repeat(*rows))?, Aux::None))
            }
            OpKind::Sum => {
                unary(1)?;
                Ok((Tensor::scalar(v(0).sum()), Aux::None))
            }
            OpKind::Mean => {
                unary(1)?;
                let a = v(0);
                Ok((Tensor::scalar(a.sum() / a.numel() as f64), Aux::None))
            }
        }
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Returns a gradient for every trainable leaf, zero-filled when the leaf
    /// has no path to the loss.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check_ids(&[loss])?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        let mut out = BTreeMap::new();
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        out.insert(NodeId(idx), upstream);
                    }
                }
                Op::Apply(kind, inputs) => {
                    self.backward_op(kind, inputs, node, &upstream, &mut grads)?;
                }
            }
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { trainable: true } = node.op {
                out.entry(NodeId(idx))
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: out })
    }

    fn backward_op(
        &self,
        kind: &OpKind,
        inputs: &[NodeId],
        node: &Node,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let needs = |i: usize| self.nodes[inputs[i].0].requires_grad;
        let y = &node.value;

        // Accumulates into the gradient slot of input `i`.
        fn slot<'a>(
            grads: &'a mut [Option<Tensor>],
            id: NodeId,
            shape: &[usize],
        ) -> &'a mut Tensor {
            grads[id.0].get_or_insert_with(|| Tensor::zeros(shape))
        }
        let accumulate = |grads: &mut [Option<Tensor>], i: usize, contrib: Tensor| {
            let id = inputs[i];
            match &mut grads[id.0] {
                Some(g) => g.add_assign(&contrib),
                empty => *empty = Some(contrib),
            }
        };
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Tensor {
            let data = (0..dy.numel()).map(|k| dy.data()[k] * f(k)).collect();
            Tensor::new(dy.shape().to_vec(), data).expect("shape preserved")
        };

        match kind {
            OpKind::MatMul => {
                let (a, b) = (val(0), val(1));
                let (m, k, n) = (a.rows(), a.cols(), b.cols());
                if needs(0) {
                    let g = slot(grads, inputs[0], a.shape());
                    gemm(
                        m,
                        n,
                        k,
                        dy.data(),
                        false,
                        b.data(),
                        true,
                        g.data_mut(),
                        true,
                    );
                }
                if needs(1) {
                    let g = slot(grads, inputs[1], b.shape());
                    gemm(
                        k,
                        m,
                        n,
                        a.data(),
                        true,
                        dy.data(),
                        false,
                        g.data_mut(),
                        true,
                    );
                }
            }
            OpKind::Add => {
                if needs(0) {
                    accumulate(grads, 0, dy.clone());
                }
                if needs(1) {
                    let b = val(1);
                    if b.shape() == dy.shape() {
                        accumulate(grads, 1, dy.clone());
                    } else {
                        let c = dy.cols();
                        let mut col = vec![0.0; c];
                        for row in dy.data().chunks(c) {
                            for (s, x) in col.iter_mut().zip(row) {
                                *s += x;
                            }
                        }
                        accumulate(grads, 1, Tensor::new(b.shape().to_vec(), col)?);
                    }
                }
            }
            OpKind::Sub => {
                if needs(0) {
                    accumulate(grads, 0, dy.clone());
                }
                if needs(1) {
                    accumulate(grads, 1, dy.map(|x| -x));
                }
            }
            OpKind::Mul => {
                let (a, b) = (val(0), val(1));
                if needs(0) {
                    accumulate(grads, 0, elementwise(&|k| b.data()[k]));
                }
                if needs(1) {
                    accumulate(grads, 1, elementwise(&|k| a.data()[k]));
                }
            }
            OpKind::Scale(c) => accumulate(grads, 0, dy.map(|x| x * c)),
            OpKind::Relu => {
                let x = val(0);
                accumulate(
                    grads,
                    0,
                    elementwise(&|k| f64::from(u8::from(x.data()[k] > 0.0))),
                );
            }
            OpKind::Gelu => {
                let x = val(0);
                accumulate(grads, 0, elementwise(&|k| gelu_grad(x.data()[k])));
            }
            OpKind::Tanh => {
                accumulate(grads, 0, elementwise(&|k| 1.0 - y.data()[k] * y.data()[k]));
            }
            OpKind::SoftmaxLastAxis => {
                let c = y.cols();
                let mut dx = vec![0.0; y.numel()];
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = dy.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, 0, Tensor::new(y.shape().to_vec(), dx)?);
            }
            OpKind::LayerNorm { .. } => {
                let Aux::Norm { xhat, inv_std } = &node.aux else {
                    unreachable!("layer-norm caches its statistics");
                };
                let gain = val(1);
                let c = y.cols();
                let n = c as f64;
                if needs(0) {
                    let mut dx = vec![0.0; y.numel()];
                    for r in 0..y.rows() {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = dy.data()[r * c + j] * gain.data()[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * c + j];
                        }
                        for j in 0..c {
                            let dh = dy.data()[r * c + j] * gain.data()[j];
                            dx[r * c + j] =
                                inv_std[r] / n * (n * dh - sum_dh - xhat[r * c + j] * sum_dh_h);
                        }
                    }
                    accumulate(grads, 0, Tensor::new(y.shape().to_vec(), dx)?);
                }
                if needs(1) || needs(2) {
                    let mut dgain = vec![0.0; c];
                    let mut dbias = vec![0.0; c];
                    for r in 0..y.rows() {
                        for j in 0..c {
                            dgain[j] += dy.data()[r * c + j] * xhat[r * c + j];
                            dbias[j] += dy.data()[r * c + j];
                        }
                    }
                    if needs(1) {
                        accumulate(grads, 1, Tensor::vector(dgain));
                    }
                    if needs(2) {
                        accumulate(grads, 2, Tensor::vector(dbias));
                    }
                }
            }
            OpKind::Conv1d => {
                let (x, w) = (val(0), val(1));
                let (len, cin) = (x.rows(), x.cols());
                let (k, cout) = (w.shape()[0], w.shape()[2]);
                let pad = k / 2;
                for tap in 0..k {
                    let lo = pad.saturating_sub(tap);
                    let hi = (len + pad).saturating_sub(tap).min(len);
                    if lo >= hi {
                        continue;
                    }
                    let src = lo + tap - pad;
                    let rows = hi - lo;
                    let dy_block = &dy.data()[lo * cout..hi * cout];
                    if needs(0) {
                        let g = slot(grads, inputs[0], x.shape());
                        let wk = &w.data()[tap * cin * cout..(tap + 1) * cin * cout];
                        gemm(
                            rows,
                            cout,
                            cin,
                            dy_block,
                            false,
                            wk,
                            true,
                            &mut g.data_mut()[src * cin..(src + rows) * cin],
                            true,
                        );
                    }
                    if needs(1) {
                        let g = slot(grads, inputs[1], w.shape());
                        gemm(
                            cin,
                            rows,
                            cout,
                            &x.data()[src * cin..(src + rows) * cin],
                            true,
                            dy_block,
                            false,
                            &mut g.data_mut()[tap * cin * cout..(tap + 1) * cin * cout],
                            true,
                        );
                    }
                }
            }
            OpKind::MaxPool1dStride2 => {
                let Aux::Argmax(arg) = &node.aux else {
                    unreachable!("max-pool caches its argmax");
                };
                let x = val(0);
                let c = x.cols();
                let g = slot(grads, inputs[0], x.shape());
                for (k, &src) in arg.iter().enumerate() {
                    g.data_mut()[src * c + k % c] += dy.data()[k];
                }
            }
            OpKind::MseLoss => {
                let (a, b) = (val(0), val(1));
                let scale = 2.0 * dy.item() / a.numel() as f64;
                let diff: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, t)| x - t).collect();
                if needs(0) {
                    let d = diff.iter().map(|d| d * scale).collect();
                    accumulate(grads, 0, Tensor::new(a.shape().to_vec(), d)?);
                }
                if needs(1) {
                    let d = diff.iter().map(|d| -d * scale).collect();
                    accumulate(grads, 1, Tensor::new(b.shape().to_vec(), d)?);
                }
            }
            OpKind::Transpose => {
                let (r, c) = (dy.rows(), dy.cols());
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = dy.data()[i * c + j];
                    }
                }
                accumulate(grads, 0, Tensor::new(vec![c, r], out)?);
            }
            OpKind::SliceRows { start, len } => {
                let x = val(0);
                let c = x.cols();
                let g = slot(grads, inputs[0], x.shape());
                for (dst, src) in g.data_mut()[start * c..(start + len) * c]
                    .iter_mut()
                    .zip(dy.data())
                {
                    *dst += src;
                }
            }
            OpKind::SliceCols { start, len } => {
                let x = val(0);
                let c = x.cols();
                let g = slot(grads, inputs[0], x.shape());
                for r in 0..x.rows() {
                    for j in 0..*len {
                        g.data_mut()[r * c + start + j] += dy.data()[r * len + j];
                    }
                }
            }
            OpKind::ConcatCols => {
                let total = dy.cols();
                let mut offset = 0;
                for (i, id) in inputs.iter().enumerate() {
                    let part = &self.nodes[id.0].value;
                    let c = part.cols();
                    if needs(i) {
                        let g = slot(grads, *id, part.shape());
                        for r in 0..part.rows() {
                            for j in 0..c {
                                g.data_mut()[r * c + j] += dy.data()[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            OpKind::GatherRows(idx) => {
                let x = val(0);
                let c = x.cols();
                let g = slot(grads, inputs[0], x.shape());
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        g.data_mut()[i * c + j] += dy.data()[k * c + j];
                    }
                }
            }
            OpKind::ScatterRows(idx) => {
                let c = dy.cols();
                if needs(0) {
                    let mut d = dy.clone();
                    for &i in idx {
                        d.data_mut()[i * c..(i + 1) * c].fill(0.0);
                    }
                    accumulate(grads, 0, d);
                }
                if needs(1) {
                    let mut d = Vec::with_capacity(idx.len() * c);
                    for &i in idx {
                        d.extend_from_slice(dy.row(i));
                    }
                    accumulate(grads, 1, Tensor::new(vec![idx.len(), c], d)?);
                }
            }
            OpKind::MeanRows { .. } => {
                let x = val(0);
                let c = x.cols();
                let mut col = vec![0.0; c];
                for r in 0..dy.rows() {
                    for (s, v) in col.iter_mut().zip(dy.row(r)) {
                        *s += v;
                    }
                }
                let n = x.rows() as f64;
                col.iter_mut().for_each(|s| *s /= n);
                accumulate(
                    grads,
                    0,
                    Tensor::new(x.shape().to_vec(), col.repeat(x.rows()))?,
                );
            }
            OpKind::Sum => {
                let x = val(0);
                accumulate(grads, 0, Tensor::filled(x.shape(), dy.item()));
            }
            OpKind::Mean => {
                let x = val(0);
                accumulate(
                    grads,
                    0,
                    Tensor::filled(x.shape(), dy.item() / x.numel() as f64),
                );
            }
        }
        Ok(())
    }

    // Convenience wrappers.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Gelu, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::SoftmaxLastAxis, &[a])
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(OpKind::LayerNorm { eps: 1e-5 }, &[x, gain, bias])
    }

    pub fn conv1d(&mut self, x: NodeId, kernel: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Conv1d, &[x, kernel])
    }

    pub fn maxpool(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MaxPool1dStride2, &[x])
    }

    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MseLoss, &[pred, target])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(OpKind::SliceRows { start, len }, &[a])
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.apply(OpKind::SliceCols { start, len }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::ConcatCols, parts)
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::GatherRows(idx), &[a])
    }

    pub fn scatter_rows(&mut self, base: NodeId, rows: NodeId, idx: Vec<usize>) -> Result<NodeId> {
        self.apply(OpKind::ScatterRows(idx), &[base, rows])
    }

    pub fn mean_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.apply(OpKind::MeanRows { rows }, &[a])
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g.input(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let i = g.input(Tensor::identity(3));
        let out = g.matmul(a, i).unwrap();
        assert_eq!(g.value(out), g.value(a));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![0.0; 3]));
        let s = g.softmax(a).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn maxpool_uses_ceil() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[43, 2]));
        let p = g.maxpool(a).unwrap();
        assert_eq!(g.value(p).shape(), &[22, 2]);
        let a = g.input(Tensor::zeros(&[56, 1]));
        let p = g.maxpool(a).unwrap();
        let p = g.maxpool(p).unwrap();
        assert_eq!(g.value(p).shape(), &[14, 1]);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let mut g = Graph::new();
        let a = g.input(m(5, 1, &[1.0, 5.0, 2.0, 0.0, 3.0]));
        let p = g.maxpool(a).unwrap();
        // windows: [0,1], [1,3], [3,4]
        assert_eq!(g.value(p).data(), &[5.0, 5.0, 3.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        match err {
            AutodiffError::ShapeMismatch { op, shapes } => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = g.input(Tensor::zeros(&[3, 2]));
        let msg = g.add(a, c).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, -2.0]));
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let c = g.input(Tensor::scalar(3.0));
        let loss = g.scale(c, 2.0).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(AutodiffError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn bias_add_broadcasts_over_rows() {
        let mut g = Graph::new();
        let a = g.input(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = g.param(Tensor::vector(vec![10.0, 20.0]));
        let s = g.add(a, b).unwrap();
        assert_eq!(g.value(s).data(), &[11.0, 22.0, 13.0, 24.0]);
        let loss = g.sum(s).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![f64::MAX]));
        assert!(matches!(
            g.scale(a, 10.0),
            Err(AutodiffError::NonFinite("scale"))
        ));
    }

    #[test]
    fn scatter_rejects_duplicate_rows() {
        let mut g = Graph::new();
        let base = g.input(Tensor::zeros(&[3, 2]));
        let rows = g.input(Tensor::zeros(&[2, 2]));
        assert!(g.scatter_rows(base, rows, vec![1, 1]).is_err());
        assert!(g.scatter_rows(base, rows, vec![0, 2]).is_ok());
    }

    #[test]
    fn conv1d_same_padding_matches_loop() {
        let x = m(4, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let w = Tensor::new(vec![3, 2, 1], vec![0.5, -1.0, 2.0, 0.25, -0.5, 1.5]).unwrap();
        let mut g = Graph::new();
        let xi = g.input(x.clone());
        let wi = g.input(w.clone());
        let y = g.conv1d(xi, wi).unwrap();
        for t in 0..4i64 {
            let mut expect = 0.0;
            for k in 0..3i64 {
                let s = t + k - 1;
                if (0..4).contains(&s) {
                    for c in 0..2 {
                        expect += x.at(s as usize, c) * w.data()[(k as usize) * 2 + c];
                    }
                }
            }
            assert!((g.value(y).data()[t as usize] - expect).abs() < 1e-12);
        }
    }
}
