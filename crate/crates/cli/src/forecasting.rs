//! Forecaster training and rolling test-period evaluation.

use gridpatch_autodiff::Tensor;
use gridpatch_core::confidence::{blend, Conformer, ENSEMBLE_SIZE};
use gridpatch_core::data::{make_windows, split_boundary, RenewableSeries};
use gridpatch_core::forecast::{
    rmse, thin, train, ForecastConfig, ForecastModel, Forecaster, Persistence, TrainConfig,
};
use gridpatch_core::{Error, Result};
use serde::Serialize;

/// Trains a fresh model on the training windows of `series`. Returns the
/// model and the mean loss of every epoch.
pub fn train_forecaster(
    series: &RenewableSeries,
    config: &ForecastConfig,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<(ForecastModel, Vec<f64>)> {
    let split = make_windows(series, config.input_len, config.decoder_len, config.horizon)?;
    let windows = thin(&split.train, train_cfg.max_windows);
    let mut model = ForecastModel::new(config.clone(), series.num_units(), seed)?;
    let history = train(&mut model, &windows, train_cfg)?;
    Ok((model, history))
}

/// Errors of one test-period issue day.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowReport {
    pub t0: usize,
    pub conformer: f64,
    /// The snapshot issued on `t0` itself.
    pub single: f64,
    pub persistence: f64,
    /// `Σ λ_i · rmse_i` over the blended snapshots.
    pub bound: f64,
    pub max_snapshot: f64,
    pub lambdas: Vec<f64>,
    pub snapshot_rmse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellReport {
    pub input_len: usize,
    pub horizon: usize,
    /// Blended rows scored per window.
    pub rows: usize,
    pub windows: Vec<WindowReport>,
}

impl CellReport {
    fn mean(&self, f: impl Fn(&WindowReport) -> f64) -> f64 {
        self.windows.iter().map(f).sum::<f64>() / self.windows.len().max(1) as f64
    }

    pub fn conformer_rmse(&self) -> f64 {
        self.mean(|w| w.conformer)
    }

    pub fn single_rmse(&self) -> f64 {
        self.mean(|w| w.single)
    }

    pub fn persistence_rmse(&self) -> f64 {
        self.mean(|w| w.persistence)
    }

    pub fn bound_rmse(&self) -> f64 {
        self.mean(|w| w.bound)
    }

    /// Fraction of windows where the blend strictly beats the single snapshot.
    pub fn win_rate(&self) -> f64 {
        self.mean(|w| if w.conformer < w.single { 1.0 } else { 0.0 })
    }
}

fn first_rows(t: &Tensor, rows: usize) -> Result<Tensor> {
    let c = t.cols();
    Ok(Tensor::matrix(rows, c, t.data()[..rows * c].to_vec())?)
}

/// Rolls the Conformer over every issue day of the test period (the last
/// tenth of the series) and scores `horizon − 5` blended rows per day, the
/// span every snapshot in the ensemble still covers.
pub fn evaluate_conformer(
    source: &dyn Forecaster,
    series: &RenewableSeries,
    input_len: usize,
    horizon: usize,
    mu: f64,
) -> Result<CellReport> {
    if horizon <= ENSEMBLE_SIZE {
        return Err(Error::Config(format!(
            "horizon {horizon} leaves no rows to blend"
        )));
    }
    let rows = horizon - ENSEMBLE_SIZE;
    let days = series.num_days();
    let boundary = split_boundary(days);
    if boundary < ENSEMBLE_SIZE + input_len || boundary + rows >= days {
        return Err(Error::invalid(format!(
            "{days}-day series too short to evaluate horizon {horizon}"
        )));
    }
    let persistence = Persistence { horizon: rows };
    let mut conformer = Conformer::new(mu, rows);
    conformer.reset(boundary - ENSEMBLE_SIZE);
    for t in boundary - ENSEMBLE_SIZE..boundary {
        conformer.predict(t, source, series)?;
    }
    let mut windows = Vec::new();
    for t0 in boundary..days - rows {
        let out = conformer.predict(t0, source, series)?;
        let real = series.slice_days(t0 + 1, rows)?;
        let lambdas = out.weights().expect("pool primed before the first window");
        let mut snapshot_rmse = Vec::with_capacity(ENSEMBLE_SIZE);
        for r in &out.records {
            let snap = conformer
                .pool()
                .get(r.issue_time)
                .ok_or(Error::MissingSnapshot(r.issue_time))?;
            snapshot_rmse.push(rmse(&blend(&[snap], &[1.0], t0, rows)?, &real)?);
        }
        windows.push(WindowReport {
            t0,
            conformer: rmse(&out.forecast, &real)?,
            single: rmse(&first_rows(&out.fresh.values, rows)?, &real)?,
            persistence: rmse(&persistence.snapshot(series, t0)?.values, &real)?,
            bound: lambdas.iter().zip(&snapshot_rmse).map(|(l, e)| l * e).sum(),
            max_snapshot: snapshot_rmse
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            lambdas,
            snapshot_rmse,
        });
    }
    Ok(CellReport {
        input_len,
        horizon,
        rows,
        windows,
    })
}
