//! State vector layout: thirteen observation groups followed by the forecast.
//!
//! | # | group                  | length    | scale                              |
//! |---|------------------------|-----------|------------------------------------|
//! | 1 | generator reactive out | n_gen     | ÷ max(q_max, −q_min)               |
//! | 2 | bus voltage            | n_bus     | (v − 1) ÷ 0.05                     |
//! | 3 | branch-start P         | n_branch  | ÷ (T_j · base_mva)                 |
//! | 4 | branch-start Q         | n_branch  | ÷ (T_j · base_mva)                 |
//! | 5 | branch-end P           | n_branch  | ÷ (T_j · base_mva)                 |
//! | 6 | branch-end Q           | n_branch  | ÷ (T_j · base_mva)                 |
//! | 7 | branch load ratio      | n_branch  | I_j ÷ T_j                          |
//! | 8 | branch current         | n_branch  | ÷ mean T                           |
//! | 9 | load P                 | n_load    | ÷ base load P                      |
//! |10 | load Q                 | n_load    | ÷ base load Q                      |
//! |11 | grid loss              | 1         | ÷ (2% of total base load)          |
//! |12 | generator active out   | n_gen     | ÷ P^max                            |
//! |13 | generator status       | n_gen     | 0 or 1                             |
//! | F | forecast               | rows·n_new| ÷ renewable P^max, row-major       |

use gridpatch_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridCase, GridState};

pub const GROUP_NAMES: [&str; 13] = [
    "gen_q",
    "bus_v",
    "branch_p_from",
    "branch_q_from",
    "branch_p_to",
    "branch_q_to",
    "branch_load_ratio",
    "branch_current",
    "load_p",
    "load_q",
    "grid_loss",
    "gen_p",
    "gen_status",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Offsets of every block of the state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateLayout {
    pub segments: Vec<Segment>,
    pub forecast_rows: usize,
    pub n_new: usize,
}

impl StateLayout {
    pub fn new(case: &GridCase, forecast_rows: usize) -> Self {
        let (g, b, m, l) = (case.n_gen(), case.n_bus(), case.n_branch(), case.n_load());
        let lens = [g, b, m, m, m, m, m, m, l, l, 1, g, g];
        let mut segments = Vec::with_capacity(14);
        let mut offset = 0;
        for (name, len) in GROUP_NAMES.iter().zip(lens) {
            segments.push(Segment {
                name: (*name).into(),
                offset,
                len,
            });
            offset += len;
        }
        let n_new = case.n_new();
        segments.push(Segment {
            name: "forecast".into(),
            offset,
            len: forecast_rows * n_new,
        });
        Self {
            segments,
            forecast_rows,
            n_new,
        }
    }

    pub fn obs_len(&self) -> usize {
        self.segments[GROUP_NAMES.len()].offset
    }

    pub fn len(&self) -> usize {
        let last = self.segments.last().expect("segments");
        last.offset + last.len
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Case-level constants that bring each group to order one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScales {
    gen_q: Vec<f64>,
    branch_power: Vec<f64>,
    mean_limit: f64,
    load_p: Vec<f64>,
    load_q: Vec<f64>,
    loss: f64,
    gen_p: Vec<f64>,
    renewable_p: Vec<f64>,
}

impl ObsScales {
    pub fn new(case: &GridCase) -> Self {
        let pos = |x: f64| if x > 1e-9 { x } else { 1.0 };
        let total_load: f64 = case.loads.iter().map(|l| l.p).sum();
        let mean_limit = if case.branches.is_empty() {
            1.0
        } else {
            case.branches.iter().map(|b| b.limit).sum::<f64>() / case.n_branch() as f64
        };
        Self {
            gen_q: case
                .generators
                .iter()
                .map(|g| pos(g.q_max.max(-g.q_min)))
                .collect(),
            branch_power: case
                .branches
                .iter()
                .map(|b| pos(b.limit * case.base_mva))
                .collect(),
            mean_limit: pos(mean_limit),
            load_p: case.loads.iter().map(|l| pos(l.p)).collect(),
            load_q: case.loads.iter().map(|l| pos(l.q)).collect(),
            loss: pos(0.02 * total_load),
            gen_p: case.generators.iter().map(|g| pos(g.p_max)).collect(),
            renewable_p: case
                .renewables()
                .iter()
                .map(|&i| pos(case.generators[i].p_max))
                .collect(),
        }
    }
}

/// The thirteen scaled observation groups of a grid state.
pub fn observation_groups(case: &GridCase, state: &GridState, scales: &ObsScales) -> Vec<Vec<f64>> {
    let sol = &state.solution;
    let div =
        |xs: &[f64], s: &[f64]| -> Vec<f64> { xs.iter().zip(s).map(|(x, s)| x / s).collect() };
    vec![
        div(&sol.gen_q, &scales.gen_q),
        sol.v.iter().map(|v| (v - 1.0) / 0.05).collect(),
        div(&sol.p_from, &scales.branch_power),
        div(&sol.q_from, &scales.branch_power),
        div(&sol.p_to, &scales.branch_power),
        div(&sol.q_to, &scales.branch_power),
        sol.current
            .iter()
            .zip(&case.branches)
            .map(|(i, b)| i / b.limit)
            .collect(),
        sol.current.iter().map(|i| i / scales.mean_limit).collect(),
        div(&state.load_p, &scales.load_p),
        div(&state.load_q, &scales.load_q),
        vec![sol.loss_mw / scales.loss],
        div(&state.p, &scales.gen_p),
        state
            .online
            .iter()
            .map(|&on| if on { 1.0 } else { 0.0 })
            .collect(),
    ]
}

/// Flat state fed to the networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateVector(pub Vec<f64>);

/// Concatenates the observation groups and the forecast block (MW, scaled by
/// renewable rating) in the documented order.
pub fn assemble_state(
    layout: &StateLayout,
    scales: &ObsScales,
    obs: &[Vec<f64>],
    forecast: Option<&Tensor>,
) -> Result<StateVector> {
    if obs.len() != GROUP_NAMES.len() {
        return Err(Error::Shape {
            op: "assemble state",
            detail: format!("expected {} groups, got {}", GROUP_NAMES.len(), obs.len()),
        });
    }
    let mut out = Vec::with_capacity(layout.len());
    for (seg, group) in layout.segments.iter().zip(obs) {
        if group.len() != seg.len {
            return Err(Error::Shape {
                op: "assemble state",
                detail: format!(
                    "group {} has {} values, layout {}",
                    seg.name,
                    group.len(),
                    seg.len
                ),
            });
        }
        out.extend_from_slice(group);
    }
    match (layout.forecast_rows, forecast) {
        (0, None) => {}
        (rows, Some(f)) if f.rank() == 2 && f.rows() == rows && f.cols() == layout.n_new => {
            for r in 0..rows {
                out.extend(f.row(r).iter().zip(&scales.renewable_p).map(|(v, s)| v / s));
            }
        }
        (rows, f) => {
            return Err(Error::Shape {
                op: "assemble state",
                detail: format!(
                    "forecast block needs {rows}×{}, got {:?}",
                    layout.n_new,
                    f.map(|t| t.shape().to_vec())
                ),
            })
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("state vector has non-finite entries"));
    }
    Ok(StateVector(out))
}
