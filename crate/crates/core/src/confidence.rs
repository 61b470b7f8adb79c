//! Confidence-weighted blending of recent forecast snapshots.
//!
//! Each of the five snapshots issued on the days before `t0` is judged on the
//! days that have since been realized. A day is correct when the RMSE over
//! units is below `mu`. With `m` correct and `n` incorrect days out of
//! `d = m + n`, the snapshot's confidence is `m·log10(d+1)/(m+n)` and the
//! blend weights are the normalized confidences.

use std::collections::BTreeMap;

use gridpatch_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::data::RenewableSeries;
use crate::error::{Error, Result};
use crate::forecast::{Forecaster, PredictionSnapshot};

pub const DEFAULT_MU: f64 = 5.0;
/// Number of past snapshots blended into each forecast.
pub const ENSEMBLE_SIZE: usize = 5;
/// Rows of the blended forecast used by the dispatcher.
pub const FINAL_ROWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Correct,
    Incorrect,
}

/// Judges one forecast day: correct iff the RMSE over units is strictly below `mu`.
pub fn judge_day(pred: &[f64], real: &[f64], mu: f64) -> Result<Verdict> {
    if pred.len() != real.len() || pred.is_empty() {
        return Err(Error::Shape {
            op: "judge day",
            detail: format!("{} predicted vs {} realized units", pred.len(), real.len()),
        });
    }
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    let mse = pred
        .iter()
        .zip(real)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    Ok(if mse.sqrt() < mu {
        Verdict::Correct
    } else {
        Verdict::Incorrect
    })
}

/// `m·log10(d+1)/(m+n)`, zero when nothing has been judged.
pub fn confidence(m: usize, n: usize, d: usize) -> f64 {
    if m + n == 0 {
        return 0.0;
    }
    m as f64 * ((d + 1) as f64).log10() / (m + n) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub issue_time: usize,
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub con: f64,
    pub lambda: f64,
}

/// Judges the `d = t0 − issue_time` realized days of a snapshot.
pub fn score_snapshot(
    snapshot: &PredictionSnapshot,
    series: &RenewableSeries,
    t0: usize,
    mu: f64,
) -> Result<ConfidenceRecord> {
    let d = t0.saturating_sub(snapshot.issue_time);
    if !(1..=ENSEMBLE_SIZE).contains(&d) {
        return Err(Error::invalid(format!(
            "snapshot issued on day {} is {} days old on day {t0}; must be 1..={ENSEMBLE_SIZE}",
            snapshot.issue_time,
            t0 as i64 - snapshot.issue_time as i64
        )));
    }
    if t0 >= series.num_days() || d > snapshot.horizon() {
        return Err(Error::invalid(format!(
            "day {t0} is not realized in the series"
        )));
    }
    let mut m = 0;
    for day in snapshot.issue_time + 1..=t0 {
        let pred = snapshot.row_for_day(day).expect("within horizon");
        if judge_day(pred, series.day(day), mu)? == Verdict::Correct {
            m += 1;
        }
    }
    Ok(ConfidenceRecord {
        issue_time: snapshot.issue_time,
        d,
        m,
        n: d - m,
        con: confidence(m, d - m, d),
        lambda: 0.0,
    })
}

/// Normalizes the confidences of five records (oldest first) into weights and
/// stores them in the records. With no positive confidence all weight goes to
/// the newest record.
pub fn normalize(records: &mut [ConfidenceRecord]) -> Result<Vec<f64>> {
    if records.len() != ENSEMBLE_SIZE {
        return Err(Error::invalid(format!(
            "expected {ENSEMBLE_SIZE} records, got {}",
            records.len()
        )));
    }
    let total: f64 = records.iter().map(|r| r.con).sum();
    let weights: Vec<f64> = if total > 0.0 {
        records.iter().map(|r| r.con / total).collect()
    } else {
        (0..ENSEMBLE_SIZE)
            .map(|i| if i + 1 == ENSEMBLE_SIZE { 1.0 } else { 0.0 })
            .collect()
    };
    for (r, w) in records.iter_mut().zip(&weights) {
        r.lambda = *w;
    }
    Ok(weights)
}

/// Weighted sum of the rows of each snapshot covering days `t0+1 ..= t0+rows`.
pub fn blend(
    snapshots: &[&PredictionSnapshot],
    weights: &[f64],
    t0: usize,
    rows: usize,
) -> Result<Tensor> {
    if snapshots.len() != weights.len() || snapshots.is_empty() {
        return Err(Error::invalid("one weight per snapshot required"));
    }
    let units = snapshots[0].values.cols();
    let mut out = Tensor::zeros(&[rows, units]);
    for (s, &w) in snapshots.iter().zip(weights) {
        for r in 0..rows {
            let row = s.row_for_day(t0 + 1 + r).ok_or_else(|| {
                Error::invalid(format!(
                    "snapshot issued on day {} does not cover day {}",
                    s.issue_time,
                    t0 + 1 + r
                ))
            })?;
            for (o, v) in out.data_mut()[r * units..(r + 1) * units]
                .iter_mut()
                .zip(row)
            {
                *o += w * v;
            }
        }
    }
    Ok(out)
}

/// Store of issued snapshots keyed by issue day; the oldest are evicted
/// beyond capacity.
#[derive(Clone, Debug)]
pub struct SnapshotPool {
    capacity: usize,
    snapshots: BTreeMap<usize, PredictionSnapshot>,
}

impl SnapshotPool {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(ENSEMBLE_SIZE + 1),
            snapshots: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, snapshot: PredictionSnapshot) {
        self.snapshots.insert(snapshot.issue_time, snapshot);
        while self.snapshots.len() > self.capacity {
            self.snapshots.pop_first();
        }
    }

    pub fn get(&self, issue_time: usize) -> Option<&PredictionSnapshot> {
        self.snapshots.get(&issue_time)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn clear(&mut self) {
        self.snapshots.clear();
    }
}

/// Output of one blended prediction.
#[derive(Clone, Debug)]
pub struct ConformerOutput {
    pub t0: usize,
    /// `rows × units` forecast for days `t0+1 ..= t0+rows`.
    pub forecast: Tensor,
    /// Scored records oldest first; empty while the pool warms up.
    pub records: Vec<ConfidenceRecord>,
    pub fresh: PredictionSnapshot,
}

impl ConformerOutput {
    pub fn weights(&self) -> Option<Vec<f64>> {
        (!self.records.is_empty()).then(|| self.records.iter().map(|r| r.lambda).collect())
    }
}

/// Episode-scoped blender. Days count from the episode origin set by `reset`.
#[derive(Clone, Debug)]
pub struct Conformer {
    pub mu: f64,
    pub rows: usize,
    pool: SnapshotPool,
    origin: usize,
}

impl Conformer {
    pub fn new(mu: f64, rows: usize) -> Self {
        Self {
            mu,
            rows,
            pool: SnapshotPool::new(2 * ENSEMBLE_SIZE),
            origin: 0,
        }
    }

    /// Empties the pool and restarts the step count at `origin`.
    pub fn reset(&mut self, origin: usize) {
        self.pool.clear();
        self.origin = origin;
    }

    pub fn pool(&self) -> &SnapshotPool {
        &self.pool
    }

    /// Issues the snapshot for `t0` and blends the five previous ones. During
    /// the first five steps of an episode the fresh snapshot is used directly.
    pub fn predict(
        &mut self,
        t0: usize,
        forecaster: &dyn Forecaster,
        series: &RenewableSeries,
    ) -> Result<ConformerOutput> {
        let fresh = forecaster.snapshot(series, t0)?;
        if fresh.horizon() < self.rows + ENSEMBLE_SIZE {
            return Err(Error::invalid(format!(
                "{}-day snapshots cannot cover {} blended rows",
                fresh.horizon(),
                self.rows
            )));
        }
        self.pool.insert(fresh.clone());
        if t0 < self.origin + ENSEMBLE_SIZE {
            let units = fresh.values.cols();
            let forecast = Tensor::matrix(
                self.rows,
                units,
                fresh.values.data()[..self.rows * units].to_vec(),
            )?;
            return Ok(ConformerOutput {
                t0,
                forecast,
                records: Vec::new(),
                fresh,
            });
        }
        let mut records = Vec::with_capacity(ENSEMBLE_SIZE);
        let mut snaps = Vec::with_capacity(ENSEMBLE_SIZE);
        for issue in t0 - ENSEMBLE_SIZE..t0 {
            let s = self.pool.get(issue).ok_or(Error::MissingSnapshot(issue))?;
            records.push(score_snapshot(s, series, t0, self.mu)?);
            snaps.push(s);
        }
        let weights = normalize(&mut records)?;
        let forecast = blend(&snaps, &weights, t0, self.rows)?;
        Ok(ConformerOutput {
            t0,
            forecast,
            records,
            fresh,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(con: f64) -> ConfidenceRecord {
        ConfidenceRecord {
            issue_time: 0,
            d: 1,
            m: 1,
            n: 0,
            con,
            lambda: 0.0,
        }
    }

    #[test]
    fn judge_boundary() {
        assert_eq!(
            judge_day(&[1.0, 2.0], &[1.0, 2.0], 5.0).unwrap(),
            Verdict::Correct
        );
        assert_eq!(
            judge_day(&[5.0, 5.0], &[0.0, 0.0], 5.0).unwrap(),
            Verdict::Incorrect
        );
        assert!(judge_day(&[1.0], &[1.0, 2.0], 5.0).is_err());
    }

    #[test]
    fn confidence_examples() {
        assert!((confidence(1, 0, 1) - std::f64::consts::LOG10_2).abs() < 1e-15);
        assert!((confidence(4, 1, 5) - 0.8 * 6f64.log10()).abs() < 1e-15);
        assert!((confidence(4, 1, 5) - 0.622_521).abs() < 1e-6);
        assert_eq!(confidence(0, 3, 3), 0.0);
    }

    #[test]
    fn normalize_rules() {
        let mut equal: Vec<_> = (0..5).map(|_| rec(0.3)).collect();
        assert!(normalize(&mut equal)
            .unwrap()
            .iter()
            .all(|w| (w - 0.2).abs() < 1e-15));
        let mut one: Vec<_> = [0.0, 0.0, 0.4, 0.0, 0.0].iter().map(|&c| rec(c)).collect();
        assert_eq!(normalize(&mut one).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        let mut none: Vec<_> = (0..5).map(|_| rec(0.0)).collect();
        assert_eq!(normalize(&mut none).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(none[4].lambda, 1.0);
        assert!(normalize(&mut none[..4]).is_err());
    }

    #[test]
    fn pool_evicts_oldest() {
        let mut pool = SnapshotPool::new(6);
        for t in 0..10 {
            pool.insert(PredictionSnapshot::new(t, Tensor::zeros(&[15, 1])).unwrap());
        }
        assert_eq!(pool.len(), 6);
        assert!(pool.get(3).is_none());
        assert!(pool.get(4).is_some());
    }
}
