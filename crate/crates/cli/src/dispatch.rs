//! Agent training and evaluation over seeded episode schedules.

use std::sync::Arc;

use gridpatch_core::confidence::{Conformer, ENSEMBLE_SIZE};
use gridpatch_core::data::{split_boundary, RenewableSeries};
use gridpatch_core::ddpg::{
    run_episode, Agent, AgentConfig, EpisodeOptions, EpisodeRecord, ForecastMode, Policy,
    StateBuilder,
};
use gridpatch_core::dispatcher::NecessityConfig;
use gridpatch_core::forecast::{Forecaster, SnapshotCache};
use gridpatch_core::grid::{EpisodeScores, GridCase, GridEnv};
use gridpatch_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Variant {
    pub name: String,
    pub horizon: ForecastMode,
    pub patching: bool,
    pub policy: Policy,
}

impl Variant {
    pub fn new(name: &str, horizon: ForecastMode, patching: bool) -> Self {
        Self {
            name: name.into(),
            horizon,
            patching,
            policy: Policy::Agent,
        }
    }

    /// The standard comparison set.
    pub fn ablations() -> Vec<Variant> {
        vec![
            Variant::new("ten-day", ForecastMode::TenDay, true),
            Variant::new("one-day", ForecastMode::OneDay, true),
            Variant::new("no-forecast", ForecastMode::Off, true),
            Variant::new("no-patching", ForecastMode::TenDay, false),
            Variant {
                policy: Policy::Random,
                ..Variant::new("random", ForecastMode::TenDay, true)
            },
        ]
    }
}

/// Everything an episode needs besides the agent.
pub struct DispatchSetup {
    pub case: Arc<GridCase>,
    pub series: Arc<RenewableSeries>,
    pub forecasts: SnapshotCache,
    pub necessity: NecessityConfig,
    pub mu: f64,
    pub episode_cap: usize,
    /// Earliest start day with enough history for forecasting and priming.
    pub first_day: usize,
}

impl DispatchSetup {
    /// Issues a forecast for every day from the first usable one to the end of
    /// the series, so all variants and episodes share identical snapshots.
    pub fn new(
        case: Arc<GridCase>,
        series: Arc<RenewableSeries>,
        forecaster: &dyn Forecaster,
        input_len: usize,
        necessity: NecessityConfig,
        mu: f64,
        episode_cap: usize,
    ) -> Result<Self> {
        let issue_from = input_len.saturating_sub(1);
        let first_day = issue_from + ENSEMBLE_SIZE;
        let days = series.num_days();
        let boundary = split_boundary(days);
        if first_day + episode_cap + 1 >= boundary || boundary + episode_cap + 1 >= days {
            return Err(Error::invalid(format!(
                "{days}-day series too short for {episode_cap}-step episodes on both sides of day {boundary}"
            )));
        }
        let forecasts = SnapshotCache::build(forecaster, &series, issue_from..days)?;
        Ok(Self {
            case,
            series,
            forecasts,
            necessity,
            mu,
            episode_cap,
            first_day,
        })
    }

    pub fn env(&self) -> Result<GridEnv> {
        Ok(
            GridEnv::new(Arc::clone(&self.case), Arc::clone(&self.series))?
                .with_max_steps(Some(self.episode_cap)),
        )
    }

    pub fn state_dim(&self, horizon: ForecastMode) -> usize {
        StateBuilder::new(&self.case, horizon).len()
    }

    pub fn new_agent(
        &self,
        horizon: ForecastMode,
        config: &AgentConfig,
        seed: u64,
    ) -> Result<Agent> {
        Agent::new(
            self.state_dim(horizon),
            self.case.n_gen(),
            config.clone(),
            seed,
        )
    }

    fn options(
        &self,
        variant: &Variant,
        start_day: usize,
        sigma: f64,
        learn: bool,
    ) -> EpisodeOptions {
        EpisodeOptions {
            start_day,
            forecast: variant.horizon,
            patching: variant.patching.then(|| self.necessity.clone()),
            policy: variant.policy,
            sigma,
            learn,
        }
    }

    fn conformer(&self, horizon: ForecastMode) -> Conformer {
        Conformer::new(self.mu, horizon.rows().max(1))
    }

    /// Training episodes start uniformly inside the training period.
    pub fn train(
        &self,
        agent: &mut Agent,
        variant: &Variant,
        episodes: usize,
        seed: u64,
    ) -> Result<Vec<EpisodeRecord>> {
        let mut env = self.env()?;
        let mut conformer = self.conformer(variant.horizon);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last_start = split_boundary(self.series.num_days()) - self.episode_cap - 1;
        let mut records = Vec::with_capacity(episodes);
        for ep in 0..episodes {
            let start = rng.random_range(self.first_day..=last_start);
            let sigma = agent.config.sigma(ep as f64 / (episodes.max(2) - 1) as f64);
            let opts = self.options(variant, start, sigma, true);
            records.push(run_episode(
                &mut env,
                agent,
                &mut conformer,
                &self.forecasts,
                &opts,
            )?);
        }
        Ok(records)
    }

    /// Start days of evaluation episodes, evenly spread over the test period.
    pub fn eval_days(&self, episodes: usize) -> Vec<usize> {
        let boundary = split_boundary(self.series.num_days());
        let span = self.series.num_days() - boundary - self.episode_cap - 1;
        (0..episodes)
            .map(|k| boundary + k * span / episodes.max(1))
            .collect()
    }

    /// Noise-free episodes without learning.
    pub fn evaluate(
        &self,
        agent: &mut Agent,
        variant: &Variant,
        episodes: usize,
    ) -> Result<Vec<EpisodeRecord>> {
        let mut env = self.env()?;
        let mut conformer = self.conformer(variant.horizon);
        self.eval_days(episodes)
            .into_iter()
            .map(|day| {
                let opts = self.options(variant, day, 0.0, false);
                run_episode(&mut env, agent, &mut conformer, &self.forecasts, &opts)
            })
            .collect()
    }
}

/// Per-episode scores averaged over an evaluation run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MeanScores {
    pub episodes: usize,
    pub steps: f64,
    pub security: f64,
    pub avg_cost: f64,
    pub avg_urre: f64,
    pub total_reward: f64,
}

pub fn mean_scores(records: &[EpisodeRecord]) -> MeanScores {
    let n = records.len().max(1) as f64;
    let mean =
        |f: &dyn Fn(&EpisodeScores) -> f64| records.iter().map(|r| f(&r.scores)).sum::<f64>() / n;
    MeanScores {
        episodes: records.len(),
        steps: mean(&|s| s.steps as f64),
        security: mean(&|s| s.security),
        avg_cost: mean(&|s| s.avg_cost),
        avg_urre: mean(&|s| s.avg_urre),
        total_reward: mean(&|s| s.total_reward),
    }
}
