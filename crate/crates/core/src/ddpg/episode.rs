//! One online episode: forecast, act, patch, step, store, learn.

use gridpatch_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::agent::Agent;
use super::networks::{action_bounds, from_box, to_box};
use super::replay::Transition;
use super::state::{assemble_state, observation_groups, ObsScales, StateLayout};
use crate::confidence::{Conformer, ENSEMBLE_SIZE};
use crate::dispatcher::{patch_action, NecessityConfig};
use crate::error::{Error, Result};
use crate::forecast::Forecaster;
use crate::grid::{
    episode_scores, DoneReason, EpisodeScores, GenKind, GridCase, GridEnv, GridState,
    RewardBreakdown,
};

/// How many forecast rows enter the state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastMode {
    TenDay,
    OneDay,
    Off,
}

impl ForecastMode {
    pub fn rows(self) -> usize {
        match self {
            ForecastMode::TenDay => 10,
            ForecastMode::OneDay => 1,
            ForecastMode::Off => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ForecastMode::TenDay => "ten-day",
            ForecastMode::OneDay => "one-day",
            ForecastMode::Off => "off",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ten-day" => Ok(ForecastMode::TenDay),
            "one-day" => Ok(ForecastMode::OneDay),
            "off" => Ok(ForecastMode::Off),
            other => Err(Error::Config(format!("unknown forecast mode `{other}`"))),
        }
    }
}

/// Who proposes set-points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Agent,
    Random,
}

#[derive(Clone, Debug)]
pub struct EpisodeOptions {
    pub start_day: usize,
    pub forecast: ForecastMode,
    /// `None` applies the raw proposal to every unit.
    pub patching: Option<NecessityConfig>,
    pub policy: Policy,
    /// Exploration noise; zero for evaluation.
    pub sigma: f64,
    /// Store transitions and update the networks.
    pub learn: bool,
}

/// Log line of one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub day: usize,
    pub reward: RewardBreakdown,
    pub done: Option<DoneReason>,
    pub selected: Vec<usize>,
    /// Confidence weights of the blended forecast, oldest snapshot first.
    pub weights: Option<Vec<f64>>,
    /// Applied set-points respect unit ranges and ramp limits.
    pub limits_ok: bool,
    pub critic_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub start_day: usize,
    pub done: DoneReason,
    pub scores: EpisodeScores,
    pub trace: Vec<StepTrace>,
}

/// Whether a transition between two operating points honours unit ranges for
/// every running non-slack unit and ramp limits for thermal units that ran on
/// both days.
pub fn limits_respected(case: &GridCase, prev: &GridState, next: &GridState) -> bool {
    const TOL: f64 = 1e-9;
    case.generators.iter().enumerate().all(|(i, g)| {
        if i == case.slack_gen || !next.online[i] {
            return true;
        }
        let p = next.p[i];
        match g.kind {
            GenKind::Renewable => p >= -TOL && p <= g.p_max + TOL,
            GenKind::Thermal => {
                let in_range = p >= g.p_min - TOL && p <= g.p_max + TOL;
                let ramp_ok = !prev.online[i] || (p - prev.p[i]).abs() <= g.max_ramp() + TOL;
                in_range && ramp_ok
            }
        }
    })
}

/// Shared pieces of state construction for one case.
#[derive(Clone, Debug)]
pub struct StateBuilder {
    pub layout: StateLayout,
    pub scales: ObsScales,
    pub mode: ForecastMode,
}

impl StateBuilder {
    pub fn new(case: &GridCase, mode: ForecastMode) -> Self {
        Self {
            layout: StateLayout::new(case, mode.rows()),
            scales: ObsScales::new(case),
            mode,
        }
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    /// State for `grid` with the Conformer forecast issued on its day.
    pub fn build(
        &self,
        case: &GridCase,
        grid: &GridState,
        conformer: &mut Conformer,
        forecaster: &dyn Forecaster,
        env: &GridEnv,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let obs = observation_groups(case, grid, &self.scales);
        if self.mode == ForecastMode::Off {
            return Ok((
                assemble_state(&self.layout, &self.scales, &obs, None)?.0,
                None,
            ));
        }
        let out = conformer.predict(grid.day, forecaster, env.series())?;
        let n_new = self.layout.n_new;
        let rows = self.layout.forecast_rows;
        let f = &out.forecast;
        let mut data = Vec::with_capacity(rows * n_new);
        for r in 0..rows {
            data.extend_from_slice(&f.row(r)[..n_new]);
        }
        let block = Tensor::matrix(rows, n_new, data)?;
        let state = assemble_state(&self.layout, &self.scales, &obs, Some(&block))?;
        Ok((state.0, out.weights()))
    }
}

/// Runs one episode from `options.start_day` until the environment reports
/// done. The Conformer pool is primed with the five issue days preceding the
/// start so the blended forecast is available from the first step.
pub fn run_episode(
    env: &mut GridEnv,
    agent: &mut Agent,
    conformer: &mut Conformer,
    forecaster: &dyn Forecaster,
    options: &EpisodeOptions,
) -> Result<EpisodeRecord> {
    let case = env.case().clone();
    if agent.n_actions() != case.n_gen() {
        return Err(Error::invalid(format!(
            "agent drives {} units, case has {}",
            agent.n_actions(),
            case.n_gen()
        )));
    }
    if let Some(cfg) = &options.patching {
        cfg.validate(case.n_gen())?;
    }
    let builder = StateBuilder::new(&case, options.forecast);
    if builder.len() != agent.state_dim() {
        return Err(Error::Shape {
            op: "run episode",
            detail: format!(
                "state has {} entries, agent expects {}",
                builder.len(),
                agent.state_dim()
            ),
        });
    }
    let bounds = action_bounds(&case);
    let incident = case.incident_branches();
    let start = options.start_day;

    env.reset(start)?;
    if options.forecast != ForecastMode::Off {
        let origin = start.checked_sub(ENSEMBLE_SIZE).ok_or_else(|| {
            Error::invalid(format!(
                "episode start {start} leaves no room to prime the forecast pool"
            ))
        })?;
        conformer.reset(origin);
        for t in origin..start {
            conformer.predict(t, forecaster, env.series())?;
        }
    }
    let (mut state, mut weights) = builder.build(&case, env.state(), conformer, forecaster, env)?;

    let mut trace = Vec::new();
    loop {
        let normalized = match options.policy {
            Policy::Agent => agent.act(&state, options.sigma)?,
            Policy::Random => agent.random_action(),
        };
        let proposed = to_box(&bounds, &normalized);
        let prev = env.state().clone();
        let (patched, selected) = match &options.patching {
            Some(cfg) => patch_action(&case, &prev, &incident, &proposed, cfg)?,
            None => (proposed, (0..case.n_gen()).collect()),
        };
        let outcome = env.step(&patched)?;
        let next_grid = env.state();
        let limits_ok = limits_respected(&case, &prev, next_grid);

        let (next_state, next_weights) = if outcome.done == Some(DoneReason::PowerFlow) {
            (state.clone(), None)
        } else {
            builder.build(&case, next_grid, conformer, forecaster, env)?
        };
        let critic_loss = if options.learn {
            let terminal = outcome.done.is_some_and(DoneReason::is_failure);
            agent
                .observe(Transition {
                    state: state.clone(),
                    action: from_box(&bounds, &patched),
                    reward: outcome.reward.reward,
                    next_state: next_state.clone(),
                    done: terminal,
                })?
                .map(|s| s.critic_loss)
        } else {
            None
        };
        trace.push(StepTrace {
            step: trace.len(),
            day: next_grid.day,
            reward: outcome.reward,
            done: outcome.done,
            selected,
            weights,
            limits_ok,
            critic_loss,
        });
        if let Some(done) = outcome.done {
            let rewards: Vec<RewardBreakdown> = trace.iter().map(|t| t.reward.clone()).collect();
            return Ok(EpisodeRecord {
                start_day: start,
                done,
                scores: episode_scores(&rewards),
                trace,
            });
        }
        state = next_state;
        weights = next_weights;
    }
}
