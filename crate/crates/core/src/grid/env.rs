//! Day-stepped dispatch environment.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::case::{GenKind, GridCase};
use super::objective::{
    operation_cost, renewable_parts, renewable_utilization, security_components, RewardBreakdown,
};
use super::powerflow::{solve_power_flow, PowerFlowSolution};
use crate::data::RenewableSeries;
use crate::error::{Error, Result};

/// Why an episode ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    PowerFlow,
    Voltage,
    SlackLimit,
    SeriesEnd,
    StepCap,
}

impl DoneReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DoneReason::PowerFlow => "powerflow",
            DoneReason::Voltage => "voltage",
            DoneReason::SlackLimit => "slack-limit",
            DoneReason::SeriesEnd => "series-end",
            DoneReason::StepCap => "step-cap",
        }
    }

    /// Whether the episode ended because the grid became infeasible.
    pub fn is_failure(self) -> bool {
        matches!(
            self,
            DoneReason::PowerFlow | DoneReason::Voltage | DoneReason::SlackLimit
        )
    }
}

/// Operating point of one day.
#[derive(Clone, Debug, PartialEq)]
pub struct GridState {
    pub day: usize,
    pub online: Vec<bool>,
    /// Active output of every unit in MW, slack included.
    pub p: Vec<f64>,
    /// Available renewable output, in renewable order.
    pub availability: Vec<f64>,
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    pub solution: PowerFlowSolution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: RewardBreakdown,
    pub done: Option<DoneReason>,
    /// Set-points after clipping, with the slack's balancing output.
    pub applied: Vec<f64>,
}

pub struct GridEnv {
    case: Arc<GridCase>,
    series: Arc<RenewableSeries>,
    renewables: Vec<usize>,
    reference_cost: f64,
    max_steps: Option<usize>,
    state: Option<GridState>,
    steps: usize,
    finished: bool,
}

impl GridEnv {
    /// The series supplies availability for the renewable units in order; extra
    /// columns are ignored.
    pub fn new(case: Arc<GridCase>, series: Arc<RenewableSeries>) -> Result<Self> {
        case.validate()?;
        let renewables = case.renewables();
        if series.num_units() < renewables.len() {
            return Err(Error::invalid(format!(
                "case has {} renewable units but the series only {}",
                renewables.len(),
                series.num_units()
            )));
        }
        Ok(Self {
            reference_cost: case.reference_cost(),
            case,
            series,
            renewables,
            max_steps: None,
            state: None,
            steps: 0,
            finished: false,
        })
    }

    /// Ends episodes after this many steps.
    pub fn with_max_steps(mut self, max_steps: Option<usize>) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn case(&self) -> &GridCase {
        &self.case
    }

    pub fn series(&self) -> &RenewableSeries {
        &self.series
    }

    pub fn reference_cost(&self) -> f64 {
        self.reference_cost
    }

    pub fn state(&self) -> &GridState {
        self.state.as_ref().expect("environment was reset")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn availability(&self, day: usize) -> Vec<f64> {
        let row = self.series.day(day);
        (0..self.renewables.len()).map(|k| row[k]).collect()
    }

    /// Starts an episode on `day` from a balanced dispatch: renewables at
    /// availability, thermal units spread over their ranges to meet demand.
    pub fn reset(&mut self, day: usize) -> Result<&GridState> {
        if day + 1 >= self.series.num_days() {
            return Err(Error::invalid(format!(
                "episode cannot start on day {day} of a {}-day series",
                self.series.num_days()
            )));
        }
        let case = &self.case;
        let availability = self.availability(day);
        let (load_p, load_q) = case.loads_on(day);
        let mut p = vec![0.0; case.n_gen()];
        for (k, &i) in self.renewables.iter().enumerate() {
            p[i] = availability[k].min(case.generators[i].p_max);
        }
        let thermals: Vec<usize> = case
            .thermals()
            .into_iter()
            .filter(|&i| i != case.slack_gen)
            .collect();
        let slack = &case.generators[case.slack_gen];
        let need = load_p.iter().sum::<f64>() - p.iter().sum::<f64>() - slack.midpoint();
        let floor: f64 = thermals.iter().map(|&i| case.generators[i].p_min).sum();
        let range: f64 = thermals
            .iter()
            .map(|&i| case.generators[i].p_max - case.generators[i].p_min)
            .sum();
        let alpha = if range > 0.0 {
            ((need - floor) / range).clamp(0.0, 1.0)
        } else {
            0.0
        };
        for &i in &thermals {
            let g = &case.generators[i];
            p[i] = g.p_min + alpha * (g.p_max - g.p_min);
        }
        let online = vec![true; case.n_gen()];
        let solution = solve_power_flow(case, &online, &p, &load_p, &load_q)?;
        p[case.slack_gen] = solution.gen_p[case.slack_gen];
        self.state = Some(GridState {
            day,
            online,
            p,
            availability,
            load_p,
            load_q,
            solution,
        });
        self.steps = 0;
        self.finished = false;
        Ok(self.state())
    }

    /// Clips a requested dispatch for the next day: exact zero shuts a thermal
    /// unit down, a stopped unit restarts inside its range, renewables are
    /// capped by availability, running thermal units obey the ramp limit.
    pub fn clip_action(&self, action: &[f64], next_availability: &[f64]) -> (Vec<bool>, Vec<f64>) {
        let case = &self.case;
        let state = self.state();
        let mut online = state.online.clone();
        let mut p = vec![0.0; case.n_gen()];
        let mut renewable_slot = 0;
        for (i, g) in case.generators.iter().enumerate() {
            let a = action[i];
            match g.kind {
                GenKind::Renewable => {
                    let cap = next_availability[renewable_slot].min(g.p_max);
                    renewable_slot += 1;
                    p[i] = a.clamp(0.0, cap.max(0.0));
                }
                GenKind::Thermal if i == case.slack_gen => {
                    p[i] = state.p[i];
                }
                GenKind::Thermal => {
                    if a == 0.0 {
                        online[i] = false;
                        p[i] = 0.0;
                    } else if !state.online[i] {
                        online[i] = true;
                        p[i] = a.clamp(g.p_min, g.p_max);
                    } else {
                        let prev = state.p[i];
                        let ramp = g.max_ramp();
                        p[i] = a.clamp(g.p_min, g.p_max).clamp(prev - ramp, prev + ramp);
                    }
                }
            }
        }
        (online, p)
    }

    /// Applies `action` (MW per generator) to the next day.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.state.is_none() || self.finished {
            return Err(Error::invalid(
                "step called on a finished or unstarted episode",
            ));
        }
        let case = Arc::clone(&self.case);
        if action.len() != case.n_gen() {
            return Err(Error::MalformedAction(format!(
                "expected {} set-points, got {}",
                case.n_gen(),
                action.len()
            )));
        }
        if let Some(i) = action.iter().position(|a| !a.is_finite()) {
            return Err(Error::MalformedAction(format!(
                "set-point {i} is {}",
                action[i]
            )));
        }
        let day = self.state().day + 1;
        let availability = self.availability(day);
        let (online, mut p) = self.clip_action(action, &availability);
        let (load_p, load_q) = case.loads_on(day);
        let solution = solve_power_flow(&case, &online, &p, &load_p, &load_q)?;
        self.steps += 1;

        let mut done = None;
        let reward = if solution.converged {
            p[case.slack_gen] = solution.gen_p[case.slack_gen];
            let (s_b, s_r, s_v) = security_components(&case, &solution, &online);
            let cost = operation_cost(&case, &online, &self.state().online, &p);
            let (ren_p, ren_avail) = renewable_parts(&case, &p, &availability);
            let urre = renewable_utilization(&ren_p, &ren_avail);
            let slack = &case.generators[case.slack_gen];
            let slack_p = p[case.slack_gen];
            if solution
                .v
                .iter()
                .zip(&case.buses)
                .any(|(v, b)| *v < b.v_min || *v > b.v_max)
            {
                done = Some(DoneReason::Voltage);
            } else if slack_p < slack.p_min || slack_p > slack.p_max {
                done = Some(DoneReason::SlackLimit);
            }
            RewardBreakdown::new(s_b, s_r, s_v, cost, self.reference_cost, urre)
        } else {
            done = Some(DoneReason::PowerFlow);
            RewardBreakdown::default()
        };
        if done.is_none() {
            if day + 1 >= self.series.num_days() {
                done = Some(DoneReason::SeriesEnd);
            } else if self.max_steps.is_some_and(|m| self.steps >= m) {
                done = Some(DoneReason::StepCap);
            }
        }
        self.finished = done.is_some();
        self.state = Some(GridState {
            day,
            online,
            p: p.clone(),
            availability,
            load_p,
            load_q,
            solution,
        });
        Ok(StepOutcome {
            reward,
            done,
            applied: p,
        })
    }
}
