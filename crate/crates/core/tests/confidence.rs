use gridpatch_autodiff::Tensor;
use gridpatch_core::confidence::*;
use gridpatch_core::data::RenewableSeries;
use gridpatch_core::forecast::{rmse, Forecaster, PredictionSnapshot};
use gridpatch_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Issues a seeded random 15-day snapshot for every day.
struct NoisyForecaster {
    seed: u64,
    units: usize,
}

impl Forecaster for NoisyForecaster {
    fn snapshot(&self, _series: &RenewableSeries, t0: usize) -> Result<PredictionSnapshot> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((t0 as u64) << 8));
        let data = (0..15 * self.units)
            .map(|_| rng.random_range(0.0..40.0))
            .collect();
        PredictionSnapshot::new(t0, Tensor::matrix(15, self.units, data)?)
    }
}

fn random_series(days: usize, units: usize, seed: u64) -> RenewableSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RenewableSeries::new(
        units,
        (0..days * units)
            .map(|_| rng.random_range(0.0..40.0))
            .collect(),
    )
    .unwrap()
}

fn constant_snapshot(issue: usize, value: f64) -> PredictionSnapshot {
    PredictionSnapshot::new(issue, Tensor::filled(&[15, 2], value)).unwrap()
}

#[test]
fn verdicts_match_scalar_rmse() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let pred: Vec<f64> = (0..18).map(|_| rng.random_range(0.0..20.0)).collect();
        let real: Vec<f64> = (0..18).map(|_| rng.random_range(0.0..20.0)).collect();
        let mut sq = 0.0;
        for i in 0..18 {
            sq += (pred[i] - real[i]).powi(2);
        }
        let want = if (sq / 18.0).sqrt() < 7.0 {
            Verdict::Correct
        } else {
            Verdict::Incorrect
        };
        assert_eq!(judge_day(&pred, &real, 7.0).unwrap(), want);
    }
    assert_eq!(
        judge_day(&[5.0; 3], &[0.0; 3], 5.0).unwrap(),
        Verdict::Incorrect
    );
    assert!(judge_day(&[1.0], &[1.0], 0.0).is_err());
}

#[test]
fn confidence_examples() {
    assert!((confidence(1, 0, 1) - 2f64.log10()).abs() < 1e-15);
    assert!((confidence(4, 1, 5) - 0.8 * 6f64.log10()).abs() < 1e-15);
    assert_eq!(confidence(0, 3, 3), 0.0);
}

#[test]
fn scoring_counts_realized_days() {
    let series = RenewableSeries::new(2, vec![10.0; 2 * 30]).unwrap();
    let mut values = Tensor::filled(&[15, 2], 10.0);
    // Day 13 (row 2) misses by 6 on both units.
    values.data_mut()[4] = 16.0;
    values.data_mut()[5] = 16.0;
    let snap = PredictionSnapshot::new(10, values).unwrap();
    let r = score_snapshot(&snap, &series, 15, 5.0).unwrap();
    assert_eq!((r.d, r.m, r.n), (5, 4, 1));
    assert!((r.con - 0.8 * 6f64.log10()).abs() < 1e-15);
    let r = score_snapshot(&snap, &series, 11, 5.0).unwrap();
    assert_eq!((r.d, r.m, r.n), (1, 1, 0));
    assert!(score_snapshot(&snap, &series, 10, 5.0).is_err());
    assert!(score_snapshot(&snap, &series, 16, 5.0).is_err());
}

#[test]
fn normalization_rules() {
    let rec = |con: f64| ConfidenceRecord {
        issue_time: 0,
        d: 1,
        m: 1,
        n: 0,
        con,
        lambda: 0.0,
    };
    let mut equal = vec![rec(0.4); 5];
    assert!(normalize(&mut equal)
        .unwrap()
        .iter()
        .all(|w| (w - 0.2).abs() < 1e-15));
    let mut one = vec![rec(0.0), rec(0.0), rec(0.3), rec(0.0), rec(0.0)];
    assert_eq!(normalize(&mut one).unwrap(), vec![0.0, 0.0, 1.0, 0.0, 0.0]);
    let mut none = vec![rec(0.0); 5];
    assert_eq!(normalize(&mut none).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(none[4].lambda, 1.0);
    assert!(normalize(&mut vec![rec(1.0); 4]).is_err());
}

#[test]
fn warmup_returns_fresh_rows() {
    let series = random_series(40, 2, 2);
    let source = NoisyForecaster { seed: 3, units: 2 };
    let mut c = Conformer::new(DEFAULT_MU, FINAL_ROWS);
    c.reset(0);
    let out = c.predict(3, &source, &series).unwrap();
    let fresh = source.snapshot(&series, 3).unwrap();
    assert_eq!(out.forecast.data(), &fresh.values.data()[..FINAL_ROWS * 2]);
    assert!(out.weights().is_none());
}

#[test]
fn identical_snapshots_blend_to_themselves() {
    let snaps: Vec<PredictionSnapshot> = (5..10).map(|t| constant_snapshot(t, 12.5)).collect();
    let refs: Vec<&PredictionSnapshot> = snaps.iter().collect();
    let out = blend(&refs, &[0.1, 0.4, 0.0, 0.3, 0.2], 10, FINAL_ROWS).unwrap();
    assert!(out.data().iter().all(|v| (v - 12.5).abs() < 1e-12));
}

#[test]
fn blended_forecast_matches_weighted_sum_loop() {
    let series = random_series(60, 3, 4);
    let source = NoisyForecaster { seed: 5, units: 3 };
    let mut c = Conformer::new(25.0, FINAL_ROWS);
    c.reset(20);
    for t in 20..25 {
        c.predict(t, &source, &series).unwrap();
    }
    let t0 = 25;
    let out = c.predict(t0, &source, &series).unwrap();
    let w = out.weights().unwrap();
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for r in &out.records {
        assert_eq!(r.m + r.n, r.d);
    }
    for row in 0..FINAL_ROWS {
        for u in 0..3 {
            let mut want = 0.0;
            for (k, issue) in (t0 - 5..t0).enumerate() {
                let s = source.snapshot(&series, issue).unwrap();
                want += w[k] * s.values.at(t0 + 1 + row - issue - 1, u);
            }
            assert!((out.forecast.at(row, u) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn missing_snapshot_is_an_error() {
    let series = random_series(60, 2, 6);
    let source = NoisyForecaster { seed: 7, units: 2 };
    let mut c = Conformer::new(DEFAULT_MU, FINAL_ROWS);
    c.reset(0);
    assert!(c.predict(30, &source, &series).is_err());
}

#[test]
fn pool_keeps_one_snapshot_per_day() {
    let mut pool = SnapshotPool::new(6);
    for t in 0..10 {
        pool.insert(constant_snapshot(t, 1.0));
    }
    pool.insert(constant_snapshot(9, 2.0));
    assert_eq!(pool.len(), 6);
    assert!(pool.get(3).is_none());
    assert_eq!(pool.get(9).unwrap().values.at(0, 0), 2.0);
}

proptest! {
    #[test]
    fn confidence_is_monotone_in_hits(d in 1usize..=5, m in 0usize..=5) {
        prop_assume!(m < d);
        let lo = confidence(m, d - m, d);
        let hi = confidence(m + 1, d - m - 1, d);
        prop_assert!(hi >= lo);
        prop_assert!((0.0..=6f64.log10() + 1e-15).contains(&hi));
    }

    #[test]
    fn ensemble_error_is_bounded(seed in any::<u64>(), raw in prop::collection::vec(0.0f64..1.0, 5)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: f64 = raw.iter().sum::<f64>() + 1e-9;
        let weights: Vec<f64> = raw.iter().map(|w| (w + 1e-9 / 5.0) / total).collect();
        let real = Tensor::new(vec![10, 4], (0..40).map(|_| rng.random_range(0.0..50.0)).collect()).unwrap();
        let snaps: Vec<PredictionSnapshot> = (0..5)
            .map(|i| {
                let data = (0..60).map(|_| rng.random_range(0.0..50.0)).collect();
                PredictionSnapshot::new(i, Tensor::matrix(15, 4, data).unwrap()).unwrap()
            })
            .collect();
        let refs: Vec<&PredictionSnapshot> = snaps.iter().collect();
        let blended = blend(&refs, &weights, 5, 10).unwrap();
        let own: Vec<f64> = snaps
            .iter()
            .map(|s| {
                let rows: Vec<f64> = (6..16).flat_map(|d| s.row_for_day(d).unwrap().to_vec()).collect();
                rmse(&Tensor::matrix(10, 4, rows).unwrap(), &real).unwrap()
            })
            .collect();
        let ens = rmse(&blended, &real).unwrap();
        let bound: f64 = weights.iter().zip(&own).map(|(w, r)| w * r).sum();
        let worst = own.iter().cloned().fold(0.0, f64::max);
        prop_assert!(ens <= bound + 1e-9);
        prop_assert!(bound <= worst + 1e-9);
    }
}
