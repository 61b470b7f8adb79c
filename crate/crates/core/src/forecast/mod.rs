//! Long-horizon renewable forecaster and its evaluation metric.

pub mod attention;
pub mod model;
pub mod train;

use gridpatch_autodiff::Tensor;

pub use attention::{probsparse_attention, query_budget, sample_keys, sparsity_scores, top_u};
pub use model::{positional_encoding, ForecastConfig, ForecastModel, PredictionSnapshot};
pub use train::{evaluate_loss, fit_scaler, thin, train, TrainConfig};

use crate::data::RenewableSeries;
use crate::error::{Error, Result};

/// Root mean squared elementwise difference.
pub fn rmse(pred: &Tensor, real: &Tensor) -> Result<f64> {
    if pred.shape() != real.shape() {
        return Err(Error::Shape {
            op: "rmse",
            detail: format!("{:?} vs {:?}", pred.shape(), real.shape()),
        });
    }
    let sq: f64 = pred
        .data()
        .iter()
        .zip(real.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sq / pred.numel() as f64).sqrt())
}

/// Source of forecast snapshots for a given issue day.
pub trait Forecaster {
    fn snapshot(&self, series: &RenewableSeries, t0: usize) -> Result<PredictionSnapshot>;
}

impl Forecaster for ForecastModel {
    fn snapshot(&self, series: &RenewableSeries, t0: usize) -> Result<PredictionSnapshot> {
        self.predict(series, t0)
    }
}

/// Repeats the last observed day over the horizon.
#[derive(Clone, Debug)]
pub struct Persistence {
    pub horizon: usize,
}

impl Forecaster for Persistence {
    fn snapshot(&self, series: &RenewableSeries, t0: usize) -> Result<PredictionSnapshot> {
        if t0 >= series.num_days() {
            return Err(Error::invalid(format!("day {t0} beyond the series")));
        }
        let row = series.day(t0);
        let data = (0..self.horizon)
            .flat_map(|_| row.iter().copied())
            .collect();
        PredictionSnapshot::new(t0, Tensor::matrix(self.horizon, row.len(), data)?)
    }
}

/// Snapshots computed once for a range of issue days.
#[derive(Clone, Debug, Default)]
pub struct SnapshotCache {
    first_day: usize,
    snapshots: Vec<PredictionSnapshot>,
}

impl SnapshotCache {
    pub fn build(
        source: &dyn Forecaster,
        series: &RenewableSeries,
        days: std::ops::Range<usize>,
    ) -> Result<Self> {
        let snapshots = days
            .clone()
            .map(|t| source.snapshot(series, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            first_day: days.start,
            snapshots,
        })
    }

    pub fn days(&self) -> std::ops::Range<usize> {
        self.first_day..self.first_day + self.snapshots.len()
    }
}

impl Forecaster for SnapshotCache {
    fn snapshot(&self, _series: &RenewableSeries, t0: usize) -> Result<PredictionSnapshot> {
        t0.checked_sub(self.first_day)
            .and_then(|i| self.snapshots.get(i))
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no cached forecast for day {t0}")))
    }
}
