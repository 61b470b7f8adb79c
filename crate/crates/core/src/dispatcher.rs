//! Dispatching-necessity scoring and action patching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GenKind, GridCase, GridState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NecessityConfig {
    pub omega_p: f64,
    pub phi_r: f64,
    pub phi_l: f64,
    pub n_dis: usize,
}

impl Default for NecessityConfig {
    fn default() -> Self {
        Self {
            omega_p: 1.0,
            phi_r: 0.8,
            phi_l: 0.8,
            n_dis: 40,
        }
    }
}

impl NecessityConfig {
    pub fn validate(&self, n_gen: usize) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.phi_r) || !open(self.phi_l) {
            return Err(Error::Config(format!(
                "phi_r and phi_l must lie in (0, 1), got {} and {}",
                self.phi_r, self.phi_l
            )));
        }
        if self.n_dis == 0 || self.n_dis > n_gen {
            return Err(Error::Config(format!(
                "n_dis must be in 1..={n_gen}, got {}",
                self.n_dis
            )));
        }
        if !self.omega_p.is_finite() {
            return Err(Error::Config("omega_p must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityScore {
    pub generator: usize,
    pub delta_p: f64,
    pub delta_norm: f64,
    pub utilization: f64,
    pub branch_load: f64,
    pub score: f64,
}

/// Min-max normalized magnitudes of the proposed changes. A constant vector
/// maps to zeros.
pub fn normalize_deltas(delta_p: &[f64]) -> Vec<f64> {
    let mags: Vec<f64> = delta_p.iter().map(|d| d.abs()).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mags.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; mags.len()];
    }
    mags.iter().map(|m| (m - lo) / (hi - lo)).collect()
}

/// `D_i = ω_P·|ΔP_i|' + (φ_R − R_i)·ΔP_i + (φ_L − L_i)·ΔP_i`.
pub fn necessity_scores(
    delta_p: &[f64],
    utilization: &[f64],
    branch_load: &[f64],
    config: &NecessityConfig,
) -> Result<Vec<NecessityScore>> {
    if utilization.len() != delta_p.len() || branch_load.len() != delta_p.len() {
        return Err(Error::Shape {
            op: "necessity scores",
            detail: format!(
                "{} deltas, {} utilizations, {} branch loads",
                delta_p.len(),
                utilization.len(),
                branch_load.len()
            ),
        });
    }
    let norm = normalize_deltas(delta_p);
    Ok((0..delta_p.len())
        .map(|i| {
            let d = delta_p[i];
            NecessityScore {
                generator: i,
                delta_p: d,
                delta_norm: norm[i],
                utilization: utilization[i],
                branch_load: branch_load[i],
                score: config.omega_p * norm[i]
                    + (config.phi_r - utilization[i]) * d
                    + (config.phi_l - branch_load[i]) * d,
            }
        })
        .collect())
}

/// Generators that would change, best score first, ties by lower id; at most `n_dis`.
pub fn select(scores: &[NecessityScore], n_dis: usize) -> Vec<usize> {
    let mut order: Vec<&NecessityScore> = scores.iter().filter(|s| s.delta_p != 0.0).collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.generator.cmp(&b.generator))
    });
    order.into_iter().take(n_dis).map(|s| s.generator).collect()
}

/// Keeps the proposed set-points of the selected generators and the previous
/// set-points of all others. Returns the patched action and the selection.
pub fn select_and_patch(
    previous: &[f64],
    proposed: &[f64],
    scores: &[NecessityScore],
    n_dis: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if previous.len() != proposed.len() || scores.len() != proposed.len() {
        return Err(Error::Shape {
            op: "select and patch",
            detail: format!(
                "{} previous, {} proposed, {} scores",
                previous.len(),
                proposed.len(),
                scores.len()
            ),
        });
    }
    let chosen = select(scores, n_dis);
    let mut patched = previous.to_vec();
    for &i in &chosen {
        patched[i] = proposed[i];
    }
    Ok((patched, chosen))
}

/// Per-generator utilization `P_i / P_i^max`, with renewables measured against
/// current availability.
pub fn utilization(case: &GridCase, state: &GridState) -> Vec<f64> {
    let mut slot = 0;
    case.generators
        .iter()
        .zip(&state.p)
        .map(|(g, &p)| {
            let cap = match g.kind {
                GenKind::Renewable => {
                    let a = state.availability[slot].min(g.p_max);
                    slot += 1;
                    a
                }
                GenKind::Thermal => g.p_max,
            };
            if cap > 0.0 {
                p / cap
            } else {
                1.0
            }
        })
        .collect()
}

/// Largest loading ratio `I_j / T_j` among branches at each generator's bus.
pub fn neighbourhood_load(case: &GridCase, state: &GridState, incident: &[Vec<usize>]) -> Vec<f64> {
    case.generators
        .iter()
        .map(|g| {
            incident[g.bus]
                .iter()
                .map(|&j| state.solution.current[j] / case.branches[j].limit)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Scores a proposed dispatch against the current state and patches it.
pub fn patch_action(
    case: &GridCase,
    state: &GridState,
    incident: &[Vec<usize>],
    proposed: &[f64],
    config: &NecessityConfig,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let delta: Vec<f64> = proposed.iter().zip(&state.p).map(|(a, b)| a - b).collect();
    let scores = necessity_scores(
        &delta,
        &utilization(case, state),
        &neighbourhood_load(case, state, incident),
        config,
    )?;
    select_and_patch(&state.p, proposed, &scores, config.n_dis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> NecessityConfig {
        NecessityConfig {
            omega_p: 1.0,
            phi_r: 0.8,
            phi_l: 0.8,
            n_dis: 1,
        }
    }

    #[test]
    fn min_max_examples() {
        assert_eq!(normalize_deltas(&[0.0, 5.0, -10.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_deltas(&[3.0, -3.0, 3.0]), vec![0.0; 3]);
    }

    #[test]
    fn score_examples() {
        let s = necessity_scores(&[10.0, 0.0], &[0.5, 0.5], &[0.6, 0.6], &cfg()).unwrap();
        assert!((s[0].score - 6.0).abs() < 1e-12);
        assert_eq!(s[1].score, 0.0);
        let s = necessity_scores(&[-10.0, 0.0], &[0.9, 0.0], &[0.8, 0.0], &cfg()).unwrap();
        assert!((s[0].score - 2.0).abs() < 1e-12);
        assert!(necessity_scores(&[1.0], &[], &[1.0], &cfg()).is_err());
    }

    #[test]
    fn one_selection_changes_one_entry() {
        let prev = [1.0, 2.0, 3.0];
        let prop = [2.0, 3.0, 1.0];
        let s = necessity_scores(&[1.0, 1.0, -2.0], &[0.1; 3], &[0.1; 3], &cfg()).unwrap();
        let (patched, chosen) = select_and_patch(&prev, &prop, &s, 1).unwrap();
        assert_eq!(chosen.len(), 1);
        assert_eq!(patched.iter().zip(&prev).filter(|(a, b)| a != b).count(), 1);
        let (all, _) = select_and_patch(&prev, &prop, &s, 3).unwrap();
        assert_eq!(all, prop);
    }

    #[test]
    fn config_bounds() {
        assert!(cfg().validate(3).is_ok());
        assert!(NecessityConfig { n_dis: 0, ..cfg() }.validate(3).is_err());
        assert!(NecessityConfig {
            phi_r: 1.0,
            ..cfg()
        }
        .validate(3)
        .is_err());
    }
}
