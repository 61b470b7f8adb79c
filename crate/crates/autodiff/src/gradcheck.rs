//! Central finite-difference checks for graph gradients.
//!
//! The numerical side only ever calls the forward builder, so it stays
//! independent of the backward rules it is checking.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{Binding, ParamSet};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest per-tensor relative error `‖a − n‖ / max(‖a‖, ‖n‖, floor)`.
    pub max_rel_err: f64,
    /// Name of the parameter that produced `max_rel_err`.
    pub worst: String,
}

/// Compares reverse-mode gradients of `build` with central differences.
///
/// `build` must construct the same scalar loss from a freshly bound graph
/// every time it is called.
pub fn check<F>(params: &ParamSet, step: f64, floor: f64, mut build: F) -> Result<GradCheck>
where
    F: FnMut(&mut Graph, &Binding) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true);
    let loss = build(&mut g, &bound)?;
    let grads = g.backward(loss)?;
    let analytic = bound.gradients(&grads, params);

    let mut eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let loss = build(&mut g, &bound)?;
        Ok(g.value(loss).item())
    };

    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for (k, name) in params.names().iter().enumerate() {
        let n = params.tensors()[k].numel();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = work.tensors()[k].data()[i];
            work.tensors_mut()[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work.tensors_mut()[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work.tensors_mut()[k].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let a = analytic[k].data();
        let diff = a
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(floor);
        if report.worst.is_empty() || rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst = name.clone();
        }
    }
    Ok(report)
}

/// Per-op finite-difference sweep used by the test suites.
pub mod ops {
    use rand::seq::SliceRandom;
    use rand::Rng;

    use super::{check, GradCheck};
    use crate::error::Result;
    use crate::graph::{Graph, NodeId, OpKind};
    use crate::params::{Binding, ParamId, ParamSet};
    use crate::tensor::Tensor;

    /// Every differentiable op kind exercised by [`sweep`].
    pub const OP_NAMES: &[&str] = &[
        "matmul",
        "add",
        "add-bias",
        "sub",
        "elementwise-mul",
        "scale",
        "relu",
        "gelu",
        "tanh",
        "softmax-last-axis",
        "layer-norm",
        "conv1d",
        "maxpool1d-stride2",
        "mse-loss",
        "transpose",
        "slice-rows",
        "slice-cols",
        "concat-cols",
        "gather-rows",
        "scatter-rows",
        "mean-rows",
        "sum",
        "mean",
    ];

    fn away_from_zero<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
        let mut t = Tensor::randn(shape, 1.0, rng);
        for v in t.data_mut() {
            if v.abs() < 0.05 {
                *v += 0.1f64.copysign(*v);
            }
        }
        t
    }

    fn random_case<R: Rng + ?Sized>(op: &str, rng: &mut R) -> (ParamSet, OpKind, Vec<usize>) {
        let mut p = ParamSet::new();
        let r = rng.random_range(1..=4);
        let c = rng.random_range(1..=4);
        let (kind, inputs): (OpKind, Vec<usize>) = match op {
            "matmul" => {
                let n = rng.random_range(1..=4);
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                p.add("b", Tensor::randn(&[c, n], 1.0, rng));
                (OpKind::MatMul, vec![0, 1])
            }
            "add" | "sub" | "elementwise-mul" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                p.add("b", Tensor::randn(&[r, c], 1.0, rng));
                let kind = match op {
                    "add" => OpKind::Add,
                    "sub" => OpKind::Sub,
                    _ => OpKind::Mul,
                };
                (kind, vec![0, 1])
            }
            "add-bias" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                p.add("b", Tensor::randn(&[c], 1.0, rng));
                (OpKind::Add, vec![0, 1])
            }
            "scale" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                (OpKind::Scale(rng.random_range(-2.0..2.0)), vec![0])
            }
            "relu" => {
                p.add("a", away_from_zero(&[r, c], rng));
                (OpKind::Relu, vec![0])
            }
            "gelu" => {
                p.add("a", Tensor::randn(&[r, c], 1.5, rng));
                (OpKind::Gelu, vec![0])
            }
            "tanh" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                (OpKind::Tanh, vec![0])
            }
            "softmax-last-axis" => {
                p.add("a", Tensor::randn(&[r, c + 1], 1.0, rng));
                (OpKind::SoftmaxLastAxis, vec![0])
            }
            "layer-norm" => {
                let c = c + 1;
                p.add("x", Tensor::randn(&[r, c], 1.0, rng));
                p.add("gain", Tensor::randn(&[c], 1.0, rng));
                p.add("bias", Tensor::randn(&[c], 1.0, rng));
                (OpKind::LayerNorm { eps: 1e-5 }, vec![0, 1, 2])
            }
            "conv1d" => {
                let len = rng.random_range(1..=6);
                let cout = rng.random_range(1..=3);
                let k = [1, 3, 5][rng.random_range(0..3)];
                p.add("x", Tensor::randn(&[len, c], 1.0, rng));
                p.add("w", Tensor::randn(&[k, c, cout], 1.0, rng));
                (OpKind::Conv1d, vec![0, 1])
            }
            "maxpool1d-stride2" => {
                let len = rng.random_range(1..=7);
                p.add("x", Tensor::randn(&[len, c], 1.0, rng));
                (OpKind::MaxPool1dStride2, vec![0])
            }
            "mse-loss" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                p.add("b", Tensor::randn(&[r, c], 1.0, rng));
                (OpKind::MseLoss, vec![0, 1])
            }
            "transpose" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                (OpKind::Transpose, vec![0])
            }
            "slice-rows" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                let start = rng.random_range(0..r);
                let len = rng.random_range(1..=r - start);
                (OpKind::SliceRows { start, len }, vec![0])
            }
            "slice-cols" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                let start = rng.random_range(0..c);
                let len = rng.random_range(1..=c - start);
                (OpKind::SliceCols { start, len }, vec![0])
            }
            "concat-cols" => {
                let parts = rng.random_range(1..=3);
                for i in 0..parts {
                    let ci = rng.random_range(1..=3);
                    p.add(format!("p{i}"), Tensor::randn(&[r, ci], 1.0, rng));
                }
                (OpKind::ConcatCols, (0..parts).collect())
            }
            "gather-rows" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                let n = rng.random_range(1..=5);
                let idx = (0..n).map(|_| rng.random_range(0..r)).collect();
                (OpKind::GatherRows(idx), vec![0])
            }
            "scatter-rows" => {
                p.add("base", Tensor::randn(&[r, c], 1.0, rng));
                let mut all: Vec<usize> = (0..r).collect();
                all.shuffle(rng);
                let n = rng.random_range(1..=r);
                let idx: Vec<usize> = all[..n].to_vec();
                p.add("rows", Tensor::randn(&[n, c], 1.0, rng));
                (OpKind::ScatterRows(idx), vec![0, 1])
            }
            "mean-rows" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                (
                    OpKind::MeanRows {
                        rows: rng.random_range(1..=3),
                    },
                    vec![0],
                )
            }
            "sum" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                (OpKind::Sum, vec![0])
            }
            "mean" => {
                p.add("a", Tensor::randn(&[r, c], 1.0, rng));
                (OpKind::Mean, vec![0])
            }
            other => panic!("unknown op {other}"),
        };
        (p, kind, inputs)
    }

    fn apply(
        g: &mut Graph,
        bound: &Binding,
        kind: &OpKind,
        inputs: &[usize],
        ids: &[ParamId],
    ) -> Result<NodeId> {
        let nodes: Vec<NodeId> = inputs.iter().map(|&i| bound.node(ids[i])).collect();
        g.apply(kind.clone(), &nodes)
    }

    /// Runs `trials` random instances of `op` and returns the worst check.
    pub fn sweep<R: Rng + ?Sized>(op: &str, trials: usize, rng: &mut R) -> Result<GradCheck> {
        let mut worst = GradCheck {
            max_rel_err: 0.0,
            worst: op.to_string(),
        };
        for _ in 0..trials {
            let (params, kind, inputs) = random_case(op, rng);
            let ids: Vec<ParamId> = (0..params.len())
                .map(|i| params.id(&params.names()[i]).expect("registered"))
                .collect();
            // Weight the output with a fixed random tensor so that
            // sum-invariant ops (softmax, layer-norm) still get a signal.
            let mut probe = Graph::new();
            let b = params.bind(&mut probe, false);
            let out = apply(&mut probe, &b, &kind, &inputs, &ids)?;
            let weights = Tensor::randn(probe.value(out).shape(), 1.0, rng);
            let report = check(&params, 1e-5, 1e-8, |g, bound| {
                let out = apply(g, bound, &kind, &inputs, &ids)?;
                let w = g.input(weights.clone());
                let prod = g.mul(out, w)?;
                g.sum(prod)
            })?;
            if report.max_rel_err > worst.max_rel_err {
                worst.max_rel_err = report.max_rel_err;
            }
        }
        Ok(worst)
    }
}
