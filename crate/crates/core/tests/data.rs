use gridpatch_core::data::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    let cov: f64 = (0..n - lag)
        .map(|i| (x[i] - mean) * (x[i + lag] - mean))
        .sum();
    cov / var
}

#[test]
fn same_seed_same_series() {
    let p = SynthProfile::default();
    assert_eq!(
        synth_series(3, 4, 400, &p).unwrap(),
        synth_series(3, 4, 400, &p).unwrap()
    );
    assert_ne!(
        synth_series(3, 4, 400, &p).unwrap(),
        synth_series(4, 4, 400, &p).unwrap()
    );
}

#[test]
fn noiseless_series_reveals_its_period() {
    let p = SynthProfile {
        seasonal_amplitude: 0.0,
        weekly_amplitude: 0.2,
        noise_std: 0.0,
        lull_rate: 0.0,
        ..SynthProfile::default()
    };
    let s = synth_series(1, 2, 700, &p).unwrap();
    for u in 0..2 {
        let x: Vec<f64> = (0..700).map(|d| s.get(d, u)).collect();
        let best = (2..30)
            .max_by(|&a, &b| autocorrelation(&x, a).total_cmp(&autocorrelation(&x, b)))
            .unwrap();
        assert_eq!(best % 7, 0, "unit {u}: peak at lag {best}");
        assert!(autocorrelation(&x, 7) > 0.95);
    }
}

#[test]
fn noise_lag_one_correlation_matches_configuration() {
    for phi in [0.3, 0.6, 0.85] {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = ar1_noise(&mut rng, 4000, phi, 0.12);
            let r = autocorrelation(&x, 1);
            assert!((r - phi).abs() < 0.1, "phi {phi} seed {seed}: {r}");
        }
    }
}

#[test]
fn arithmetic_window_counts() {
    assert_eq!(all_window_count(100, 56, 15), 30);
    assert_eq!(all_window_count(86, 56, 30), 1);
    assert!(window_starts(85, 56, 30).is_err());
}

proptest! {
    #[test]
    fn split_matches_brute_force(days in 80usize..400, input in 10usize..60, horizon in 1usize..31) {
        prop_assume!(input + horizon <= days);
        let (train, test) = window_starts(days, input, horizon).unwrap();
        let b = split_boundary(days);
        let mut bf_train = Vec::new();
        let mut bf_test = Vec::new();
        let mut k = 0;
        while k + input + horizon <= days {
            let target: Vec<usize> = (k + input..k + input + horizon).collect();
            if target.iter().all(|&d| d < b) {
                bf_train.push(k);
            }
            if target.iter().all(|&d| d >= b) {
                bf_test.push(k);
            }
            k += 1;
        }
        prop_assert_eq!(&train, &bf_train);
        prop_assert_eq!(&test, &bf_test);
        let last_train_target = train.iter().map(|k| k + input + horizon - 1).max();
        let first_test_target = test.iter().map(|k| k + input).min();
        if let (Some(a), Some(b)) = (last_train_target, first_test_target) {
            prop_assert!(a < b);
        }
    }

    #[test]
    fn windows_are_aligned(seed in 0u64..50, horizon in prop::sample::select(vec![15usize, 20, 25, 30])) {
        let s = synth_series(seed, 2, 200, &SynthProfile::default()).unwrap();
        let split = make_windows(&s, 56, 28, horizon).unwrap();
        for w in split.train.iter().chain(&split.test) {
            let enc = &w.encoder_input;
            prop_assert_eq!(w.decoder_known.data(), &enc.data()[28 * 2..]);
            let expected = s.slice_days(w.start_day + 56, horizon).unwrap();
            prop_assert_eq!(w.target.data(), expected.data());
            prop_assert_eq!(w.time_codes.rows(), 56 + horizon);
        }
    }

    #[test]
    fn csv_round_trip_is_identity(seed in 0u64..20) {
        let s = synth_series(seed, 3, 200, &SynthProfile::default()).unwrap();
        let back = parse_series(&s.to_csv(), std::path::Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back, s);
    }
}
