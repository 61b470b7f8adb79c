//! One function per subcommand. Each writes its resolved config, its reports
//! and a `<command>.manifest.json` into the output directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use gridpatch_core::data::{load_series, synth_series, RenewableSeries};
use gridpatch_core::ddpg::{Agent, EpisodeRecord, ForecastMode, Policy};
use gridpatch_core::forecast::{
    ForecastConfig, ForecastModel, Forecaster, Persistence, TrainConfig,
};
use gridpatch_core::grid::{generate_case, GridCase};
use gridpatch_core::{Error, Result};

use crate::artifacts::{num, OutputSet, Table};
use crate::config::RunConfig;
use crate::dispatch::{mean_scores, DispatchSetup, MeanScores, Variant};
use crate::forecasting::{evaluate_conformer, train_forecaster, CellReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    GenData,
    GenCase,
    TrainForecast,
    EvalForecast,
    TrainDispatch,
    EvalDispatch,
    Ablate,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::GenData,
        Command::GenCase,
        Command::TrainForecast,
        Command::EvalForecast,
        Command::TrainDispatch,
        Command::EvalDispatch,
        Command::Ablate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::GenCase => "gen-case",
            Command::TrainForecast => "train-forecast",
            Command::EvalForecast => "eval-forecast",
            Command::TrainDispatch => "train-dispatch",
            Command::EvalDispatch => "eval-dispatch",
            Command::Ablate => "ablate",
        }
    }
}

/// Runs `command` and returns the manifest path.
pub fn run(command: Command, cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let mut out = OutputSet::new(&cfg.out)?;
    out.write_text(&format!("{}.config.txt", command.name()), &cfg.to_kv()?)?;
    match command {
        Command::GenData => gen_data(cfg, &mut out)?,
        Command::GenCase => gen_case(cfg, &mut out)?,
        Command::TrainForecast => train_forecast(cfg, &mut out)?,
        Command::EvalForecast => eval_forecast(cfg, &mut out)?,
        Command::TrainDispatch => train_dispatch(cfg, &mut out)?,
        Command::EvalDispatch => eval_dispatch(cfg, &mut out)?,
        Command::Ablate => ablate(cfg, &mut out)?,
    }
    let name = format!("{}.manifest.json", command.name());
    let manifest = out.finish(command.name(), cfg.seed)?;
    let target = manifest.with_file_name(name);
    std::fs::rename(&manifest, &target).map_err(|e| Error::io(&target, e))?;
    Ok(target)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

pub fn load_series_artifact(cfg: &RunConfig) -> Result<RenewableSeries> {
    let path = cfg.series_path();
    require(&path)?;
    load_series(&path)
}

pub fn load_case_artifact(cfg: &RunConfig) -> Result<GridCase> {
    let path = cfg.case_path();
    require(&path)?;
    GridCase::load(&path)
}

fn gen_data(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let series = synth_series(
        cfg.seed_for("data"),
        cfg.data.units,
        cfg.data.days,
        &cfg.data.profile,
    )?;
    let path = cfg.series_path();
    write_file(&path, &series.to_csv())?;
    out.track(path);
    Ok(())
}

fn gen_case(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let case = generate_case(cfg.seed_for("case"), &cfg.case)?;
    let path = cfg.case_path();
    write_file(&path, &case.to_json()?)?;
    out.track(path);
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn train_forecast(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let series = load_series_artifact(cfg)?;
    let (model, history) = train_forecaster(
        &series,
        &cfg.forecast,
        &cfg.train,
        cfg.seed_for("forecaster"),
    )?;
    let path = cfg.forecaster_path();
    model.save(&path)?;
    out.track(path);
    let mut log = Table::new(&["epoch", "loss"]);
    for (i, loss) in history.iter().enumerate() {
        log.push(vec![(i + 1).to_string(), num(*loss)]);
    }
    out.write_csv("forecast_train_log.csv", &log)?;
    Ok(())
}

/// Model for one sweep cell: the main forecaster when it matches, otherwise
/// a per-cell file, trained on the spot if the sweep allows it.
fn cell_model(
    cfg: &RunConfig,
    series: &RenewableSeries,
    input_len: usize,
    horizon: usize,
    out: &mut OutputSet,
) -> Result<ForecastModel> {
    let main = cfg.forecaster_path();
    if input_len == cfg.forecast.input_len && horizon == cfg.forecast.horizon && main.exists() {
        return ForecastModel::load(&main);
    }
    let path = cfg
        .out
        .join("sweep")
        .join(format!("forecaster_L{input_len}_H{horizon}.json"));
    if path.exists() {
        return ForecastModel::load(&path);
    }
    if !cfg.sweep.train_in_place {
        return Err(Error::MissingArtifact(path));
    }
    let fcfg = ForecastConfig {
        input_len,
        decoder_len: input_len / 2,
        horizon,
        ..cfg.forecast.clone()
    };
    let tcfg = TrainConfig {
        epochs: cfg.sweep.epochs,
        max_windows: cfg.sweep.max_windows,
        ..cfg.train.clone()
    };
    let seed = cfg.seed_for(&format!("sweep-{input_len}-{horizon}"));
    let (model, _) = train_forecaster(series, &fcfg, &tcfg, seed)?;
    let dir = path.parent().expect("sweep directory");
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    model.save(&path)?;
    out.track(path);
    Ok(model)
}

fn eval_forecast(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let series = load_series_artifact(cfg)?;
    let mut summary = Table::new(&[
        "input_len",
        "horizon",
        "rows",
        "windows",
        "conformer_rmse",
        "single_rmse",
        "persistence_rmse",
        "bound_rmse",
        "win_rate",
    ]);
    let mut windows = Table::new(&[
        "input_len",
        "horizon",
        "t0",
        "conformer",
        "single",
        "persistence",
        "bound",
        "max_snapshot",
        "lambdas",
        "snapshot_rmse",
    ]);
    for &input_len in &cfg.sweep.inputs {
        for &horizon in &cfg.sweep.horizons {
            let model = cell_model(cfg, &series, input_len, horizon, out)?;
            let report =
                evaluate_conformer(&model, &series, input_len, horizon, cfg.confidence.mu)?;
            push_cell(&mut summary, &mut windows, &report);
        }
    }
    out.write_csv("forecast_sweep.csv", &summary)?;
    out.write_csv("forecast_windows.csv", &windows)?;
    Ok(())
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";")
}

fn push_cell(summary: &mut Table, windows: &mut Table, r: &CellReport) {
    summary.push(vec![
        r.input_len.to_string(),
        r.horizon.to_string(),
        r.rows.to_string(),
        r.windows.len().to_string(),
        num(r.conformer_rmse()),
        num(r.single_rmse()),
        num(r.persistence_rmse()),
        num(r.bound_rmse()),
        num(r.win_rate()),
    ]);
    for w in &r.windows {
        windows.push(vec![
            r.input_len.to_string(),
            r.horizon.to_string(),
            w.t0.to_string(),
            num(w.conformer),
            num(w.single),
            num(w.persistence),
            num(w.bound),
            num(w.max_snapshot),
            join(&w.lambdas),
            join(&w.snapshot_rmse),
        ]);
    }
}

/// Case, series and forecasts for the dispatch commands.
pub fn dispatch_setup(cfg: &RunConfig, horizon: ForecastMode) -> Result<DispatchSetup> {
    let case = Arc::new(load_case_artifact(cfg)?);
    let series = Arc::new(load_series_artifact(cfg)?);
    let persistence;
    let model;
    let forecaster: &dyn Forecaster = if horizon == ForecastMode::Off {
        persistence = Persistence {
            horizon: cfg.forecast.horizon,
        };
        &persistence
    } else {
        let path = cfg.forecaster_path();
        require(&path)?;
        model = ForecastModel::load(&path)?;
        &model
    };
    DispatchSetup::new(
        case,
        series,
        forecaster,
        cfg.forecast.input_len,
        cfg.necessity.clone(),
        cfg.confidence.mu,
        cfg.run.episode_cap,
    )
}

fn run_variant(cfg: &RunConfig) -> Variant {
    Variant::new("configured", cfg.run.horizon, cfg.run.patching)
}

fn train_dispatch(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let variant = run_variant(cfg);
    let setup = dispatch_setup(cfg, variant.horizon)?;
    let mut agent = setup.new_agent(variant.horizon, &cfg.agent, cfg.seed_for("agent"))?;
    let records = setup.train(
        &mut agent,
        &variant,
        cfg.run.episodes,
        cfg.seed_for("episodes"),
    )?;
    let path = cfg.agent_path();
    agent.save(&path)?;
    out.track(path);
    let mut log = Table::new(&[
        "episode",
        "steps",
        "total_reward",
        "security",
        "avg_cost",
        "avg_urre",
    ]);
    for (i, r) in records.iter().enumerate() {
        let s = &r.scores;
        log.push(vec![
            i.to_string(),
            s.steps.to_string(),
            num(s.total_reward),
            num(s.security),
            num(s.avg_cost),
            num(s.avg_urre),
        ]);
    }
    out.write_csv("dispatch_train_log.csv", &log)?;
    Ok(())
}

pub fn summary_table(records: &[EpisodeRecord]) -> Table {
    let mut t = Table::new(&[
        "episode",
        "start_day",
        "done",
        "steps",
        "total_reward",
        "security",
        "avg_cost",
        "avg_urre",
    ]);
    for (i, r) in records.iter().enumerate() {
        let s = &r.scores;
        t.push(vec![
            i.to_string(),
            r.start_day.to_string(),
            r.done.as_str().to_string(),
            s.steps.to_string(),
            num(s.total_reward),
            num(s.security),
            num(s.avg_cost),
            num(s.avg_urre),
        ]);
    }
    let m = mean_scores(records);
    t.push(vec![
        "mean".into(),
        String::new(),
        String::new(),
        num(m.steps),
        num(m.total_reward),
        num(m.security),
        num(m.avg_cost),
        num(m.avg_urre),
    ]);
    t
}

pub fn steps_table(records: &[EpisodeRecord]) -> Table {
    let mut t = Table::new(&[
        "episode",
        "step",
        "day",
        "reward",
        "s_b",
        "s_r",
        "s_v",
        "cost",
        "urre",
        "zeta_s_r",
        "zeta_s_v",
        "zeta_cost",
        "cumulative_reward",
        "limits_ok",
        "done",
        "selected",
        "lambdas",
    ]);
    for (i, r) in records.iter().enumerate() {
        let mut cumulative = 0.0;
        for s in &r.trace {
            let rw = &s.reward;
            cumulative += rw.reward;
            t.push(vec![
                i.to_string(),
                s.step.to_string(),
                s.day.to_string(),
                num(rw.reward),
                num(rw.s_b),
                num(rw.s_r),
                num(rw.s_v),
                num(rw.cost),
                num(rw.urre),
                num(rw.zeta_s_r),
                num(rw.zeta_s_v),
                num(rw.zeta_cost),
                num(cumulative),
                s.limits_ok.to_string(),
                s.done.map(|d| d.as_str()).unwrap_or("").to_string(),
                s.selected
                    .iter()
                    .map(|g| g.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                s.weights.as_deref().map(join).unwrap_or_default(),
            ]);
        }
    }
    t
}

fn eval_dispatch(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let mut variant = run_variant(cfg);
    let setup = dispatch_setup(cfg, variant.horizon)?;
    let mut agent = if cfg.run.eval_policy == "random" {
        variant.policy = Policy::Random;
        setup.new_agent(variant.horizon, &cfg.agent, cfg.seed_for("random-policy"))?
    } else {
        let path = cfg.agent_path();
        require(&path)?;
        Agent::load(&path, cfg.seed_for("agent"))?
    };
    let records = setup.evaluate(&mut agent, &variant, cfg.run.eval_episodes)?;
    out.write_csv("dispatch_eval_summary.csv", &summary_table(&records))?;
    out.write_csv("dispatch_eval_steps.csv", &steps_table(&records))?;
    Ok(())
}

/// Trains and evaluates every ablation variant with identical seeds.
pub fn run_ablation(cfg: &RunConfig, variants: &[Variant]) -> Result<Vec<(Variant, MeanScores)>> {
    let mut rows = Vec::with_capacity(variants.len());
    let mut setups: Vec<(ForecastMode, DispatchSetup)> = Vec::new();
    for v in variants {
        let key = if v.horizon == ForecastMode::Off {
            ForecastMode::Off
        } else {
            ForecastMode::TenDay
        };
        if !setups.iter().any(|(k, _)| *k == key) {
            setups.push((key, dispatch_setup(cfg, key)?));
        }
        let setup = &setups
            .iter()
            .find(|(k, _)| *k == key)
            .expect("inserted above")
            .1;
        let mut agent = setup.new_agent(v.horizon, &cfg.agent, cfg.seed_for("agent"))?;
        if v.policy == Policy::Agent {
            setup.train(&mut agent, v, cfg.run.episodes, cfg.seed_for("episodes"))?;
        }
        let records = setup.evaluate(&mut agent, v, cfg.run.eval_episodes)?;
        rows.push((v.clone(), mean_scores(&records)));
    }
    Ok(rows)
}

fn ablate(cfg: &RunConfig, out: &mut OutputSet) -> Result<()> {
    let rows = run_ablation(cfg, &Variant::ablations())?;
    let mut t = Table::new(&[
        "variant",
        "horizon",
        "patching",
        "policy",
        "episodes",
        "steps",
        "security",
        "avg_cost",
        "avg_urre",
        "total_reward",
    ]);
    for (v, m) in rows {
        t.push(vec![
            v.name.clone(),
            v.horizon.as_str().to_string(),
            v.patching.to_string(),
            match v.policy {
                Policy::Agent => "agent".into(),
                Policy::Random => "random".into(),
            },
            m.episodes.to_string(),
            num(m.steps),
            num(m.security),
            num(m.avg_cost),
            num(m.avg_urre),
            num(m.total_reward),
        ]);
    }
    out.write_csv("ablation.csv", &t)?;
    Ok(())
}
