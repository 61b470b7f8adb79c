//! Security, cost and utilization terms of the dispatch objective.

use serde::{Deserialize, Serialize};

use super::case::{GenKind, GridCase};
use super::powerflow::PowerFlowSolution;

/// Weight of renewable utilization in the per-step reward.
pub const OMEGA_R: f64 = 2.0;

/// `e^x − 1`, floored just above −1 so the value stays in `(−1, 0]` for all
/// `x ≤ 0` despite rounding.
pub fn zeta(x: f64) -> f64 {
    x.exp_m1().max(-1.0 + f64::EPSILON / 2.0)
}

/// Branch-overflow score: `1 − mean_j min(I_j / T_j, 1)`.
pub fn branch_security(case: &GridCase, current: &[f64]) -> f64 {
    if case.branches.is_empty() {
        return 1.0;
    }
    let loading: f64 = case
        .branches
        .iter()
        .zip(current)
        .map(|(br, i)| (i / br.limit).min(1.0))
        .sum();
    1.0 - loading / case.n_branch() as f64
}

/// Reactive-limit score: zero inside limits, negative by the relative overrun.
pub fn reactive_security(case: &GridCase, online: &[bool], gen_q: &[f64]) -> f64 {
    case.generators
        .iter()
        .zip(online)
        .zip(gen_q)
        .map(|((g, &on), &q)| {
            if !on {
                0.0
            } else if q > g.q_max {
                1.0 - q / g.q_max
            } else if q < g.q_min {
                -(g.q_min - q) / g.q_min.abs().max(1e-9)
            } else {
                0.0
            }
        })
        .sum()
}

/// Voltage score: zero inside limits, negative by the relative excursion.
pub fn voltage_security(case: &GridCase, v: &[f64]) -> f64 {
    case.buses
        .iter()
        .zip(v)
        .map(|(b, &v)| {
            if v > b.v_max {
                1.0 - v / b.v_max
            } else if v < b.v_min {
                v / b.v_min - 1.0
            } else {
                0.0
            }
        })
        .sum()
}

/// `(S_b, S_r, S_v)` of a solved operating point.
pub fn security_components(
    case: &GridCase,
    solution: &PowerFlowSolution,
    online: &[bool],
) -> (f64, f64, f64) {
    (
        branch_security(case, &solution.current),
        reactive_security(case, online, &solution.gen_q),
        voltage_security(case, &solution.v),
    )
}

/// Fuel cost of online units plus startup cost of units that just came online.
pub fn operation_cost(case: &GridCase, online: &[bool], online_prev: &[bool], p: &[f64]) -> f64 {
    case.generators
        .iter()
        .enumerate()
        .map(|(i, g)| {
            if !online[i] {
                return 0.0;
            }
            let start = if online_prev[i] { 0.0 } else { g.startup_cost };
            g.fuel_cost(p[i]) + start
        })
        .sum()
}

/// Dispatched over available renewable output, clipped to `[0, 1]`. With no
/// availability there is nothing to curtail and the rate is 1.
pub fn renewable_utilization(p: &[f64], availability: &[f64]) -> f64 {
    let avail: f64 = availability.iter().sum();
    if avail <= 0.0 {
        return 1.0;
    }
    (p.iter().sum::<f64>() / avail).clamp(0.0, 1.0)
}

/// Renewable outputs and availability of a case, in renewable order.
pub fn renewable_parts(case: &GridCase, p: &[f64], availability: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out = Vec::new();
    let mut avail = Vec::new();
    for (k, i) in case
        .generators
        .iter()
        .enumerate()
        .filter(|(_, g)| g.kind == GenKind::Renewable)
        .map(|(i, _)| i)
        .enumerate()
    {
        out.push(p[i]);
        avail.push(availability[k].min(case.generators[i].p_max));
    }
    (out, avail)
}

/// The logged terms of one step's reward.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub s_b: f64,
    pub s_r: f64,
    pub s_v: f64,
    pub cost: f64,
    pub urre: f64,
    pub zeta_s_r: f64,
    pub zeta_s_v: f64,
    pub zeta_cost: f64,
    pub reward: f64,
}

impl RewardBreakdown {
    pub fn new(s_b: f64, s_r: f64, s_v: f64, cost: f64, reference_cost: f64, urre: f64) -> Self {
        let zeta_s_r = zeta(s_r);
        let zeta_s_v = zeta(s_v);
        let zeta_cost = zeta(-cost / reference_cost);
        Self {
            s_b,
            s_r,
            s_v,
            cost,
            urre,
            zeta_s_r,
            zeta_s_v,
            zeta_cost,
            reward: s_b + zeta_s_r + zeta_s_v + zeta_cost + OMEGA_R * urre,
        }
    }

    /// The security part of the reward.
    pub fn security(&self) -> f64 {
        self.s_b + self.zeta_s_r + self.zeta_s_v
    }
}

/// Table-style totals of an episode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScores {
    pub steps: usize,
    pub security: f64,
    pub avg_cost: f64,
    pub avg_urre: f64,
    pub total_reward: f64,
}

/// Sums rewards and security terms, averages cost and utilization. An empty
/// trace scores zero.
pub fn episode_scores(steps: &[RewardBreakdown]) -> EpisodeScores {
    if steps.is_empty() {
        return EpisodeScores::default();
    }
    let n = steps.len() as f64;
    EpisodeScores {
        steps: steps.len(),
        security: steps.iter().map(RewardBreakdown::security).sum(),
        avg_cost: steps.iter().map(|s| s.cost).sum::<f64>() / n,
        avg_urre: steps.iter().map(|s| s.urre).sum::<f64>() / n,
        total_reward: steps.iter().map(|s| s.reward).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_values() {
        assert_eq!(zeta(0.0), 0.0);
        assert!((zeta(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
        assert!(zeta(-50.0) > -1.0);
        assert!(zeta(-1e6) > -1.0);
    }

    #[test]
    fn utilization_edges() {
        assert_eq!(renewable_utilization(&[3.0, 4.0], &[3.0, 4.0]), 1.0);
        assert_eq!(renewable_utilization(&[0.0, 0.0], &[3.0, 4.0]), 0.0);
        assert_eq!(renewable_utilization(&[0.0], &[0.0]), 1.0);
    }

    #[test]
    fn single_step_scores() {
        let step = RewardBreakdown {
            s_b: 1.0,
            reward: 1.0,
            ..Default::default()
        };
        let s = episode_scores(std::slice::from_ref(&step));
        assert_eq!((s.steps, s.total_reward, s.security), (1, 1.0, 1.0));
        let d = episode_scores(&[step.clone(), step]);
        assert_eq!((d.total_reward, d.security, d.avg_cost), (2.0, 2.0, 0.0));
    }
}
