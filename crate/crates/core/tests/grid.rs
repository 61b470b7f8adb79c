use std::sync::Arc;
use std::time::Instant;

use gridpatch_core::data::{synth_series, SynthProfile};
use gridpatch_core::ddpg::limits_respected;
use gridpatch_core::grid::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn thermal(bus: usize, v_set: f64) -> Generator {
    Generator {
        kind: GenKind::Thermal,
        bus,
        p_max: 300.0,
        p_min: 0.0,
        q_max: 500.0,
        q_min: -500.0,
        v_set,
        cost_a: 0.01,
        cost_b: 10.0,
        cost_c: 5.0,
        startup_cost: 100.0,
        ramp_rate: 0.05,
    }
}

fn branch(from: usize, to: usize, r: f64, x: f64, b: f64) -> Branch {
    Branch {
        from,
        to,
        r,
        x,
        b,
        limit: 2.0,
    }
}

fn case(
    n_bus: usize,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
) -> GridCase {
    GridCase {
        base_mva: 100.0,
        slack_gen: 0,
        load_profile: LoadProfile::flat(),
        buses: vec![
            Bus {
                v_min: 0.9,
                v_max: 1.1
            };
            n_bus
        ],
        branches,
        generators,
        loads,
    }
}

/// Newton iteration on the two unknowns of a slack + PQ pair, with the
/// Jacobian written out by hand.
fn two_bus_newton(r: f64, x: f64, b_sh: f64, p_load: f64, q_load: f64) -> (f64, f64) {
    let den = r * r + x * x;
    let (g, b) = (r / den, -x / den);
    let (g11, b11, g10, b10) = (g, b + b_sh / 2.0, -g, -b);
    let (p_t, q_t) = (-p_load, -q_load);
    let (mut v, mut th) = (1.0f64, 0.0f64);
    for _ in 0..50 {
        let (s, c) = th.sin_cos();
        let p = v * v * g11 + v * (g10 * c + b10 * s);
        let q = -v * v * b11 + v * (g10 * s - b10 * c);
        let (fp, fq) = (p_t - p, q_t - q);
        if fp.abs().max(fq.abs()) < 1e-14 {
            break;
        }
        let j11 = v * (-g10 * s + b10 * c);
        let j12 = 2.0 * v * g11 + g10 * c + b10 * s;
        let j21 = v * (g10 * c + b10 * s);
        let j22 = -2.0 * v * b11 + g10 * s - b10 * c;
        let det = j11 * j22 - j12 * j21;
        th += (fp * j22 - j12 * fq) / det;
        v += (j11 * fq - j21 * fp) / det;
    }
    (v, th)
}

/// Gauss–Seidel on complex voltages. `pv` holds the voltage magnitude of
/// regulated buses; bus 0 is the slack.
fn gauss_seidel(
    c: &GridCase,
    p_spec: &[f64],
    q_spec: &[f64],
    pv: &[Option<f64>],
) -> Vec<Complex64> {
    let n = c.n_bus();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
    for br in &c.branches {
        let ys = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let half = Complex64::new(0.0, br.b / 2.0);
        y[br.from][br.from] += ys + half;
        y[br.to][br.to] += ys + half;
        y[br.from][br.to] -= ys;
        y[br.to][br.from] -= ys;
    }
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(pv[i].unwrap_or(1.0), 0.0))
        .collect();
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        for i in 1..n {
            let sum: Complex64 = (0..n).filter(|&k| k != i).map(|k| y[i][k] * v[k]).sum();
            let q = match pv[i] {
                Some(_) => -(v[i].conj() * (sum + y[i][i] * v[i])).im,
                None => q_spec[i],
            };
            let s = Complex64::new(p_spec[i], -q);
            let mut next = (s / v[i].conj() - sum) / y[i][i];
            if let Some(mag) = pv[i] {
                next = next / next.norm() * mag;
            }
            change = change.max((next - v[i]).norm());
            v[i] = next;
        }
        if change < 1e-14 {
            break;
        }
    }
    v
}

#[test]
fn two_bus_matches_hand_newton() {
    for &(r, x, b_sh, pl, ql) in &[
        (0.0, 0.1, 0.0, 50.0, 10.0),
        (0.02, 0.08, 0.04, 80.0, 30.0),
        (0.05, 0.2, 0.0, 30.0, -5.0),
    ] {
        let c = case(
            2,
            vec![branch(0, 1, r, x, b_sh)],
            vec![thermal(0, 1.0)],
            vec![Load {
                bus: 1,
                p: pl,
                q: ql,
            }],
        );
        let start = Instant::now();
        let sol = solve_power_flow(&c, &[true], &[0.0], &[pl], &[ql]).unwrap();
        assert!(start.elapsed().as_secs_f64() < 1.0);
        assert!(sol.converged && sol.iterations <= 10);
        let (v, th) = two_bus_newton(r, x, b_sh, pl / 100.0, ql / 100.0);
        assert!((sol.v[1] - v).abs() < 1e-6, "{} vs {v}", sol.v[1]);
        assert!((sol.theta[1] - th).abs() < 1e-6);
    }
}

fn five_bus() -> GridCase {
    case(
        5,
        vec![
            branch(0, 1, 0.02, 0.06, 0.06),
            branch(0, 2, 0.08, 0.24, 0.05),
            branch(1, 2, 0.06, 0.18, 0.04),
            branch(1, 3, 0.06, 0.18, 0.04),
            branch(1, 4, 0.04, 0.12, 0.03),
            branch(2, 3, 0.01, 0.03, 0.02),
            branch(3, 4, 0.08, 0.24, 0.05),
        ],
        vec![thermal(0, 1.06), thermal(1, 1.0)],
        vec![
            Load {
                bus: 1,
                p: 20.0,
                q: 10.0,
            },
            Load {
                bus: 2,
                p: 45.0,
                q: 15.0,
            },
            Load {
                bus: 3,
                p: 40.0,
                q: 5.0,
            },
            Load {
                bus: 4,
                p: 60.0,
                q: 10.0,
            },
        ],
    )
}

#[test]
fn five_bus_matches_gauss_seidel() {
    let c = five_bus();
    let p_set = [0.0, 40.0];
    let (lp, lq): (Vec<f64>, Vec<f64>) = c.loads.iter().map(|l| (l.p, l.q)).unzip();
    let start = Instant::now();
    let sol = solve_power_flow(&c, &[true, true], &p_set, &lp, &lq).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert!(sol.converged && sol.iterations <= 10);

    let mut p_spec = vec![0.0; 5];
    let mut q_spec = vec![0.0; 5];
    p_spec[1] += 0.4;
    for l in &c.loads {
        p_spec[l.bus] -= l.p / 100.0;
        q_spec[l.bus] -= l.q / 100.0;
    }
    let pv = [Some(1.06), Some(1.0), None, None, None];
    let v = gauss_seidel(&c, &p_spec, &q_spec, &pv);
    for i in 0..5 {
        assert!((sol.v[i] - v[i].norm()).abs() < 1e-6, "bus {i}");
        assert!((sol.theta[i] - v[i].arg()).abs() < 1e-6, "bus {i}");
    }
    let injected: f64 = sol.gen_p.iter().sum();
    let demand: f64 = lp.iter().sum();
    assert!((injected - demand - sol.loss_mw).abs() < 1e-6);
    assert!(sol.loss_mw > 0.0);
}

#[test]
fn generated_case_is_deterministic_and_round_trips() {
    let spec = CaseSpec::small();
    let a = generate_case(3, &spec).unwrap();
    assert_eq!(a, generate_case(3, &spec).unwrap());
    assert_ne!(a, generate_case(4, &spec).unwrap());
    assert!(a.is_connected());
    assert_eq!(
        (a.n_bus(), a.n_gen(), a.n_branch(), a.n_load()),
        (30, 12, 41, 20)
    );
    assert_eq!(a.renewables().len(), 4);
    assert_eq!(GridCase::from_json(&a.to_json().unwrap()).unwrap(), a);
}

fn random_action(c: &GridCase, rng: &mut ChaCha8Rng) -> Vec<f64> {
    c.generators
        .iter()
        .map(|g| match g.kind {
            GenKind::Renewable => rng.random_range(0.0..=g.p_max),
            GenKind::Thermal if rng.random_bool(0.05) => 0.0,
            GenKind::Thermal => rng.random_range(g.p_min..=g.p_max),
        })
        .collect()
}

#[test]
fn random_play_keeps_limits_and_reward_bounds() {
    let c = Arc::new(generate_case(1, &CaseSpec::small()).unwrap());
    let series = Arc::new(synth_series(2, 18, 400, &SynthProfile::default()).unwrap());
    let mut env = GridEnv::new(c.clone(), series)
        .unwrap()
        .with_max_steps(Some(30));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut steps = 0;
    for ep in 0..20 {
        env.reset(10 + 17 * ep).unwrap();
        assert!(env.state().solution.converged);
        loop {
            let prev = env.state().clone();
            let out = env.step(&random_action(&c, &mut rng)).unwrap();
            steps += 1;
            assert!(limits_respected(&c, &prev, env.state()));
            let r = out.reward.reward;
            assert!(r > -3.0 && r <= 1.0 + OMEGA_R, "reward {r}");
            if out.done.is_some() {
                break;
            }
        }
    }
    assert!(steps >= 20);
}

#[test]
fn finished_episode_rejects_steps() {
    let c = Arc::new(generate_case(1, &CaseSpec::minimal()).unwrap());
    let series = Arc::new(synth_series(2, 1, 200, &SynthProfile::default()).unwrap());
    let mut env = GridEnv::new(c.clone(), series)
        .unwrap()
        .with_max_steps(Some(1));
    assert!(env.step(&[0.0]).is_err());
    env.reset(0).unwrap();
    let action = env.state().p.clone();
    let out = env.step(&action).unwrap();
    assert!(out.done.is_some());
    assert!(env.step(&action).is_err());
    env.reset(0).unwrap();
    assert!(env.step(&[f64::NAN]).is_err());
    assert!(env.step(&[1.0, 2.0]).is_err());
}

proptest! {
    #[test]
    fn zeta_stays_in_open_interval(x in -1e6f64..0.0) {
        let z = zeta(x);
        prop_assert!(z > -1.0 && z <= 0.0);
    }

    #[test]
    fn reward_bounds_hold_for_any_terms(
        s_b in 0.0f64..=1.0,
        s_r in -1e3f64..=0.0,
        s_v in -1e3f64..=0.0,
        cost in 0.0f64..1e7,
        urre in 0.0f64..=1.0,
    ) {
        let r = RewardBreakdown::new(s_b, s_r, s_v, cost, 1e4, urre).reward;
        prop_assert!(r > -3.0 && r <= 1.0 + OMEGA_R);
    }
}
