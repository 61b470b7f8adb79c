//! The learner: online and target networks, optimizers and the replay pool.

use std::collections::BTreeMap;
use std::path::Path;

use gridpatch_autodiff::optim::{clip_global_norm, Adam};
use gridpatch_autodiff::{AutodiffError, Checkpoint, Graph, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::networks::{actor_loss, critic_loss, soft_update, td_targets, Actor, Batch, Critic};
use super::replay::{ReplayPool, Transition};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub hidden: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Updates start once the pool holds this many transitions.
    pub warmup: usize,
    pub clip_norm: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            replay_capacity: 20_000,
            sigma_start: 0.2,
            sigma_end: 0.02,
            hidden: 128,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            warmup: 64,
            clip_norm: 10.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch size and hidden width must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay capacity must hold at least one batch");
        }
        if self.warmup < self.batch_size {
            return bad("warm-up must cover at least one batch");
        }
        if !(self.sigma_start >= 0.0 && self.sigma_end >= 0.0) {
            return bad("exploration noise must be non-negative");
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0 && self.clip_norm > 0.0) {
            return bad("learning rates must be non-negative and clip norm positive");
        }
        Ok(())
    }

    /// Linear decay from `sigma_start` to `sigma_end` as `progress` runs 0 → 1.
    pub fn sigma(&self, progress: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        self.sigma_start + (self.sigma_end - self.sigma_start) * p
    }
}

/// Losses from one learning step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

#[derive(Clone, Debug)]
pub struct Agent {
    pub config: AgentConfig,
    pub actor: Actor,
    pub critic: Critic,
    pub target_actor: Actor,
    pub target_critic: Critic,
    pub replay: ReplayPool,
    actor_opt: Adam,
    critic_opt: Adam,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Agent {
    pub fn new(state_dim: usize, n_gen: usize, config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if state_dim == 0 || n_gen == 0 {
            return Err(Error::invalid("agent needs a non-empty state and action"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Actor::new(state_dim, n_gen, config.hidden, &mut rng);
        let critic = Critic::new(state_dim, n_gen, config.hidden, &mut rng);
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
            replay: ReplayPool::new(config.replay_capacity)?,
            actor_opt: Adam::new(config.actor_lr),
            critic_opt: Adam::new(config.critic_lr),
            rng,
            updates: 0,
            config,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.state_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.actor.n_actions()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Policy output plus Gaussian noise of scale `sigma`, clamped to `[−1, 1]`.
    pub fn act(&mut self, state: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let mut a = self.actor.act(state)?;
        if sigma > 0.0 {
            let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
            for x in &mut a {
                *x = (*x + noise.sample(&mut self.rng)).clamp(-1.0, 1.0);
            }
        }
        Ok(a)
    }

    /// Uniform action in `[−1, 1]^n` from the agent's stream.
    pub fn random_action(&mut self) -> Vec<f64> {
        use rand::Rng;
        (0..self.n_actions())
            .map(|_| self.rng.random_range(-1.0..=1.0))
            .collect()
    }

    /// Stores a transition and, past warm-up, performs one learning step.
    pub fn observe(&mut self, t: Transition) -> Result<Option<UpdateStats>> {
        self.replay.push(t)?;
        if self.replay.len() < self.config.warmup {
            return Ok(None);
        }
        let batch = self.replay.sample(self.config.batch_size, &mut self.rng)?;
        self.update(&batch).map(Some)
    }

    /// Critic step, actor step, then soft target updates.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let targets = td_targets(
            batch,
            &self.target_actor,
            &self.target_critic,
            self.config.gamma,
        )?;

        let mut g = Graph::new();
        let bc = self.critic.params.bind(&mut g, true);
        let loss = critic_loss(&mut g, &bc, &self.critic, batch, &targets)?;
        let critic_value = g.value(loss).item();
        let mut grads = bc.gradients(&g.backward(loss)?, &self.critic.params);
        clip_global_norm(&mut grads, self.config.clip_norm);
        self.critic_opt.step(&mut self.critic.params, &grads)?;

        let mut g = Graph::new();
        let ba = self.actor.params.bind(&mut g, true);
        let bc = self.critic.params.bind(&mut g, false);
        let loss = actor_loss(&mut g, &ba, &bc, &self.actor, &self.critic, &batch.states)?;
        let actor_value = g.value(loss).item();
        let mut grads = ba.gradients(&g.backward(loss)?, &self.actor.params);
        clip_global_norm(&mut grads, self.config.clip_norm);
        self.actor_opt.step(&mut self.actor.params, &grads)?;

        soft_update(
            &mut self.target_critic.params,
            &self.critic.params,
            self.config.tau,
        )?;
        soft_update(
            &mut self.target_actor.params,
            &self.actor.params,
            self.config.tau,
        )?;
        self.updates += 1;
        if !(critic_value.is_finite() && actor_value.is_finite()) {
            return Err(Error::Diverged {
                epoch: self.updates as usize,
                reason: "non-finite DDPG loss".into(),
            });
        }
        Ok(UpdateStats {
            critic_loss: critic_value,
            actor_loss: actor_value,
        })
    }

    /// Online and target networks; optimizer moments and the pool are not saved.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), "ddpg-agent".into());
        meta.insert("config".into(), serde_json::to_string(&self.config)?);
        meta.insert("state_dim".into(), self.state_dim().to_string());
        meta.insert("n_gen".into(), self.n_actions().to_string());
        let mut params = ParamSet::new();
        for (prefix, set) in [
            ("actor", &self.actor.params),
            ("critic", &self.critic.params),
            ("target_actor", &self.target_actor.params),
            ("target_critic", &self.target_critic.params),
        ] {
            for (name, t) in set.iter() {
                params.add(format!("{prefix}.{name}"), t.clone());
            }
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, seed: u64) -> Result<Self> {
        let get = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| Error::invalid(format!("agent checkpoint lacks `{k}`")))
        };
        if get("kind")? != "ddpg-agent" {
            return Err(Error::invalid("checkpoint does not hold a DDPG agent"));
        }
        let config: AgentConfig = serde_json::from_str(get("config")?)?;
        let parse = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid(format!("bad `{k}` in agent checkpoint")))
        };
        let mut agent = Self::new(parse("state_dim")?, parse("n_gen")?, config, seed)?;
        let part = |prefix: &str| -> ParamSet {
            let mut p = ParamSet::new();
            let lead = format!("{prefix}.");
            for (name, t) in ckpt.params.iter() {
                if let Some(rest) = name.strip_prefix(&lead) {
                    p.add(rest, t.clone());
                }
            }
            p
        };
        let load = |dst: &mut ParamSet, src: ParamSet| -> Result<()> {
            dst.check_compatible(&src)?;
            *dst = src;
            Ok(())
        };
        load(&mut agent.actor.params, part("actor"))?;
        load(&mut agent.critic.params, part("critic"))?;
        load(&mut agent.target_actor.params, part("target_actor"))?;
        load(&mut agent.target_critic.params, part("target_critic"))?;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path).map_err(|e| io_or(path, e))
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let ckpt = Checkpoint::load(path).map_err(|e| io_or(path, e))?;
        Self::from_checkpoint(&ckpt, seed)
    }

    /// Policy output without noise for a batch of states.
    pub fn act_batch(&self, states: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.actor.params.bind(&mut g, false);
        let s = g.input(states.clone());
        let a = self.actor.forward(&mut g, &b, s)?;
        Ok(g.value(a).clone())
    }
}

fn io_or(path: &Path, e: AutodiffError) -> Error {
    match e {
        AutodiffError::Io(io) => Error::io(path, io),
        other => other.into(),
    }
}
