//! Fixed-capacity transition store.

use gridpatch_autodiff::Tensor;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::networks::Batch;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Normalized action in `[−1, 1]^n_gen`.
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Ring buffer: once full, each insert overwrites the oldest transition.
#[derive(Clone, Debug)]
pub struct ReplayPool {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    state_dim: Option<usize>,
    action_dim: Option<usize>,
}

impl ReplayPool {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
            state_dim: None,
            action_dim: None,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::invalid("transition reward must be finite"));
        }
        if t.state.len() != t.next_state.len() {
            return Err(Error::Shape {
                op: "replay push",
                detail: format!(
                    "state {} vs next state {}",
                    t.state.len(),
                    t.next_state.len()
                ),
            });
        }
        let sd = *self.state_dim.get_or_insert(t.state.len());
        let ad = *self.action_dim.get_or_insert(t.action.len());
        if t.state.len() != sd || t.action.len() != ad {
            return Err(Error::Shape {
                op: "replay push",
                detail: format!(
                    "expected state {sd} / action {ad}, got {} / {}",
                    t.state.len(),
                    t.action.len()
                ),
            });
        }
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        Ok(())
    }

    /// Transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Distinct indices drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n == 0 || n > self.items.len() {
            return Err(Error::invalid(format!(
                "cannot draw {n} distinct transitions from {}",
                self.items.len()
            )));
        }
        Ok(sample(rng, self.items.len(), n).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(n, rng)?;
        self.batch(&idx)
    }

    pub fn batch(&self, idx: &[usize]) -> Result<Batch> {
        let rows = |f: &dyn Fn(&Transition) -> &Vec<f64>| -> Result<Tensor> {
            let v: Vec<Vec<f64>> = idx.iter().map(|&i| f(&self.items[i]).clone()).collect();
            Ok(Tensor::from_rows(&v)?)
        };
        Ok(Batch {
            states: rows(&|t| &t.state)?,
            actions: rows(&|t| &t.action)?,
            rewards: idx.iter().map(|&i| self.items[i].reward).collect(),
            next_states: rows(&|t| &t.next_state)?,
            done: idx.iter().map(|&i| self.items[i].done).collect(),
        })
    }
}
