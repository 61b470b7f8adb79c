//! Actor and critic networks and their losses.

use gridpatch_autodiff::nn::Linear;
use gridpatch_autodiff::{Binding, Graph, NodeId, ParamSet, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{GenKind, GridCase};

/// Output layers start small so initial actions sit near the box midpoint.
const HEAD_BOUND: f64 = 3e-3;

/// Deterministic policy `s ↦ tanh(MLP(s)) ∈ [−1, 1]^n_gen`.
#[derive(Clone, Debug)]
pub struct Actor {
    pub params: ParamSet,
    layers: [Linear; 3],
}

/// Action-value network `Q(s, a)` on the concatenated state and action.
#[derive(Clone, Debug)]
pub struct Critic {
    pub params: ParamSet,
    layers: [Linear; 3],
}

fn mlp<R: Rng + ?Sized>(
    p: &mut ParamSet,
    inputs: usize,
    hidden: usize,
    outputs: usize,
    rng: &mut R,
) -> [Linear; 3] {
    [
        Linear::new(p, "l1", inputs, hidden, rng),
        Linear::new(p, "l2", hidden, hidden, rng),
        Linear::with_bound(p, "l3", hidden, outputs, HEAD_BOUND, rng),
    ]
}

fn hidden_forward(g: &mut Graph, b: &Binding, layers: &[Linear; 3], x: NodeId) -> Result<NodeId> {
    let h = layers[0].forward(g, b, x)?;
    let h = g.relu(h)?;
    let h = layers[1].forward(g, b, h)?;
    let h = g.relu(h)?;
    Ok(layers[2].forward(g, b, h)?)
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_gen: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        let layers = mlp(&mut params, state_dim, hidden, n_gen, rng);
        Self { params, layers }
    }

    /// Rebuilds the layer handles around loaded parameters.
    pub fn with_params(params: ParamSet) -> Result<Self> {
        let ids = |n: &str| {
            params
                .id(n)
                .ok_or_else(|| Error::invalid(format!("actor lacks {n}")))
        };
        let layer = |i: usize| -> Result<Linear> {
            let w = ids(&format!("l{i}.weight"))?;
            let shape = params.get(w).shape();
            Ok(Linear {
                weight: w,
                bias: ids(&format!("l{i}.bias"))?,
                inputs: shape[0],
                outputs: shape[1],
            })
        };
        let layers = [layer(1)?, layer(2)?, layer(3)?];
        Ok(Self { params, layers })
    }

    pub fn state_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn n_actions(&self) -> usize {
        self.layers[2].outputs
    }

    /// Batched forward on a bound graph: `B×S → B×n`.
    pub fn forward(&self, g: &mut Graph, b: &Binding, states: NodeId) -> Result<NodeId> {
        let h = hidden_forward(g, b, &self.layers, states)?;
        Ok(g.tanh(h)?)
    }

    /// Normalized action for one state.
    pub fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let s = g.input(Tensor::matrix(1, state.len(), state.to_vec())?);
        let out = self.forward(&mut g, &b, s)?;
        Ok(g.value(out).data().to_vec())
    }
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        n_gen: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        let layers = mlp(&mut params, state_dim + n_gen, hidden, 1, rng);
        Self { params, layers }
    }

    pub fn with_params(params: ParamSet) -> Result<Self> {
        let actor = Actor::with_params(params)?;
        Ok(Self {
            layers: actor.layers,
            params: actor.params,
        })
    }

    /// Batched forward: `(B×S, B×n) → B×1`.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &Binding,
        states: NodeId,
        actions: NodeId,
    ) -> Result<NodeId> {
        let x = g.concat_cols(&[states, actions])?;
        hidden_forward(g, b, &self.layers, x)
    }

    pub fn value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let s = g.input(Tensor::matrix(1, state.len(), state.to_vec())?);
        let a = g.input(Tensor::matrix(1, action.len(), action.to_vec())?);
        let q = self.forward(&mut g, &b, s, a)?;
        Ok(g.value(q).item())
    }

    /// Q for each row of a batch.
    pub fn values(&self, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let s = g.input(states.clone());
        let a = g.input(actions.clone());
        let q = self.forward(&mut g, &b, s, a)?;
        Ok(g.value(q).data().to_vec())
    }
}

/// Box of each generator: renewables `[0, P^max]`, thermal `[P^min, P^max]`.
pub fn action_bounds(case: &GridCase) -> Vec<(f64, f64)> {
    case.generators
        .iter()
        .map(|g| match g.kind {
            GenKind::Renewable => (0.0, g.p_max),
            GenKind::Thermal => (g.p_min, g.p_max),
        })
        .collect()
}

/// Affine map from `[−1, 1]` to each generator's box.
pub fn to_box(bounds: &[(f64, f64)], a: &[f64]) -> Vec<f64> {
    bounds
        .iter()
        .zip(a)
        .map(|(&(lo, hi), &x)| lo + 0.5 * (x.clamp(-1.0, 1.0) + 1.0) * (hi - lo))
        .collect()
}

/// Inverse of [`to_box`], clamped to `[−1, 1]`.
pub fn from_box(bounds: &[(f64, f64)], p: &[f64]) -> Vec<f64> {
    bounds
        .iter()
        .zip(p)
        .map(|(&(lo, hi), &x)| {
            if hi > lo {
                (2.0 * (x - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// A sampled minibatch.
#[derive(Clone, Debug)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub rewards: Vec<f64>,
    pub next_states: Tensor,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// `y = r + γ·(1 − done)·Q′(s′, μ′(s′))`.
pub fn td_targets(
    batch: &Batch,
    target_actor: &Actor,
    target_critic: &Critic,
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let ba = target_actor.params.bind(&mut g, false);
    let bc = target_critic.params.bind(&mut g, false);
    let s2 = g.input(batch.next_states.clone());
    let a2 = target_actor.forward(&mut g, &ba, s2)?;
    let q2 = target_critic.forward(&mut g, &bc, s2, a2)?;
    Ok(g.value(q2)
        .data()
        .iter()
        .zip(&batch.rewards)
        .zip(&batch.done)
        .map(|((q, r), &d)| r + if d { 0.0 } else { gamma * q })
        .collect())
}

/// Mean squared TD error of the online critic against fixed targets.
pub fn critic_loss(
    g: &mut Graph,
    bound: &Binding,
    critic: &Critic,
    batch: &Batch,
    targets: &[f64],
) -> Result<NodeId> {
    if batch.is_empty() || targets.len() != batch.len() {
        return Err(Error::invalid(
            "critic loss needs a non-empty batch with one target per row",
        ));
    }
    let s = g.input(batch.states.clone());
    let a = g.input(batch.actions.clone());
    let q = critic.forward(g, bound, s, a)?;
    let y = g.input(Tensor::matrix(targets.len(), 1, targets.to_vec())?);
    Ok(g.mse(q, y)?)
}

/// Value of the critic loss with targets from the target networks.
pub fn critic_loss_value(
    batch: &Batch,
    critic: &Critic,
    target_actor: &Actor,
    target_critic: &Critic,
    gamma: f64,
) -> Result<f64> {
    let targets = td_targets(batch, target_actor, target_critic, gamma)?;
    let mut g = Graph::new();
    let b = critic.params.bind(&mut g, false);
    let loss = critic_loss(&mut g, &b, critic, batch, &targets)?;
    Ok(g.value(loss).item())
}

/// `−mean Q(s, μ(s))` with the critic bound as constants, so gradients reach
/// only the actor.
pub fn actor_loss(
    g: &mut Graph,
    actor_bound: &Binding,
    critic_bound: &Binding,
    actor: &Actor,
    critic: &Critic,
    states: &Tensor,
) -> Result<NodeId> {
    let s = g.input(states.clone());
    let a = actor.forward(g, actor_bound, s)?;
    let q = critic.forward(g, critic_bound, s, a)?;
    let m = g.mean(q)?;
    Ok(g.scale(m, -1.0)?)
}

/// `θ′ ← τθ + (1 − τ)θ′`.
pub fn soft_update(target: &mut ParamSet, online: &ParamSet, tau: f64) -> Result<()> {
    target.check_compatible(online)?;
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    for (t, o) in target.tensors_mut().iter_mut().zip(online.tensors()) {
        for (x, y) in t.data_mut().iter_mut().zip(o.data()) {
            *x = tau * y + (1.0 - tau) * *x;
        }
    }
    Ok(())
}
