//! Small layer helpers shared by the forecaster and the agent networks.

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{Binding, ParamId, ParamSet};
use crate::tensor::Tensor;

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    /// Uniform `±1/sqrt(in)` initialisation for both weight and bias.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self::with_bound(params, name, inputs, outputs, bound, rng)
    }

    pub fn with_bound<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        inputs: usize,
        outputs: usize,
        bound: f64,
        rng: &mut R,
    ) -> Self {
        let weight = params.add(
            format!("{name}.weight"),
            Tensor::uniform(&[inputs, outputs], -bound, bound, rng),
        );
        let bias = params.add(
            format!("{name}.bias"),
            Tensor::uniform(&[outputs], -bound, bound, rng),
        );
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Binding, x: NodeId) -> Result<NodeId> {
        let xw = g.matmul(x, bound.node(self.weight))?;
        g.add(xw, bound.node(self.bias))
    }
}

/// Layer normalisation over the last axis with learned gain and bias.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        Self {
            gain: params.add(format!("{name}.gain"), Tensor::filled(&[dim], 1.0)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, bound: &Binding, x: NodeId) -> Result<NodeId> {
        g.layer_norm(x, bound.node(self.gain), bound.node(self.bias))
    }
}
