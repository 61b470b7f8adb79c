use std::sync::Arc;

use gridpatch_autodiff::gradcheck;
use gridpatch_autodiff::optim::Adam;
use gridpatch_autodiff::{Graph, ParamSet, Tensor};
use gridpatch_core::confidence::Conformer;
use gridpatch_core::data::{synth_series, RenewableSeries, SynthProfile};
use gridpatch_core::ddpg::*;
use gridpatch_core::dispatcher::NecessityConfig;
use gridpatch_core::forecast::Persistence;
use gridpatch_core::grid::{generate_case, CaseSpec, GridCase, GridEnv};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn autodiff(e: gridpatch_core::Error) -> gridpatch_autodiff::AutodiffError {
    match e {
        gridpatch_core::Error::Autodiff(a) => a,
        other => panic!("{other}"),
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, s: usize, a: usize) -> Batch {
    Batch {
        states: Tensor::randn(&[n, s], 1.0, rng),
        actions: Tensor::uniform(&[n, a], -1.0, 1.0, rng),
        rewards: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
        next_states: Tensor::randn(&[n, s], 1.0, rng),
        done: (0..n).map(|i| i % 3 == 0).collect(),
    }
}

/// Critic with every weight zero and output bias `c`.
fn constant_critic(s: usize, a: usize, c: f64) -> Critic {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut critic = Critic::new(s, a, 8, &mut rng);
    for t in critic.params.tensors_mut() {
        t.data_mut().fill(0.0);
    }
    let id = critic.params.id("l3.bias").unwrap();
    critic.params.get_mut(id).data_mut()[0] = c;
    critic
}

#[test]
fn zero_output_maps_to_midpoints() {
    let bounds = vec![(0.0, 60.0), (15.0, 110.0)];
    assert_eq!(to_box(&bounds, &[0.0, 0.0]), vec![30.0, 62.5]);
    assert_eq!(to_box(&bounds, &[-1.0, 1.0]), vec![0.0, 110.0]);
    let back = from_box(&bounds, &[45.0, 20.0]);
    let again = to_box(&bounds, &back);
    assert!((again[0] - 45.0).abs() < 1e-12 && (again[1] - 20.0).abs() < 1e-12);
}

#[test]
fn actions_stay_in_the_box_for_random_states() {
    let case = generate_case(3, &CaseSpec::small()).unwrap();
    let bounds = action_bounds(&case);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let actor = Actor::new(20, case.n_gen(), 32, &mut rng);
    for _ in 0..1000 {
        let scale = rng.random_range(0.1..100.0);
        let state: Vec<f64> = (0..20).map(|_| rng.random_range(-scale..scale)).collect();
        let a = actor.act(&state).unwrap();
        assert_eq!(a, actor.act(&state).unwrap());
        for (p, (lo, hi)) in to_box(&bounds, &a).iter().zip(&bounds) {
            assert!(*p >= *lo && *p <= *hi, "{p} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn zero_critic_returns_its_bias() {
    let critic = constant_critic(3, 2, 0.7);
    assert_eq!(critic.value(&[1.0, -2.0, 3.0], &[0.5, -0.5]).unwrap(), 0.7);
}

#[test]
fn critic_is_differentiable_in_the_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let critic = Critic::new(4, 3, 16, &mut rng);
        let state = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let mut action = ParamSet::new();
        let id = action.add("action", Tensor::uniform(&[2, 3], -1.0, 1.0, &mut rng));
        let report = gradcheck::check(&action, 1e-6, 1e-8, |g, b| {
            let bc = critic.params.bind(g, false);
            let s = g.input(state.clone());
            let q = critic.forward(g, &bc, s, b.node(id)).map_err(autodiff)?;
            g.sum(q)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "trial {trial}: {report:?}");
    }
}

#[test]
fn batch_values_equal_per_sample_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let critic = Critic::new(5, 3, 16, &mut rng);
    let b = random_batch(&mut rng, 7, 5, 3);
    let batched = critic.values(&b.states, &b.actions).unwrap();
    for i in 0..7 {
        let q = critic.value(b.states.row(i), b.actions.row(i)).unwrap();
        assert!((q - batched[i]).abs() < 1e-12);
    }
}

#[test]
fn degenerate_critic_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let batch = random_batch(&mut rng, 6, 4, 2);
    let actor = Actor::new(4, 2, 8, &mut rng);
    let zero = constant_critic(4, 2, 0.0);
    let loss = critic_loss_value(&batch, &zero, &actor, &zero, 0.0).unwrap();
    let mean_sq = batch.rewards.iter().map(|r| r * r).sum::<f64>() / 6.0;
    assert!((loss - mean_sq).abs() < 1e-12);

    let mut flat = batch.clone();
    flat.rewards = vec![1.25; 6];
    let matching = constant_critic(4, 2, 1.25);
    assert_eq!(
        critic_loss_value(&flat, &matching, &actor, &matching, 0.0).unwrap(),
        0.0
    );
}

#[test]
fn critic_loss_matches_scalar_td_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (s, a, n) = (6, 3, 9);
        let batch = random_batch(&mut rng, n, s, a);
        let critic = Critic::new(s, a, 16, &mut rng);
        let target_actor = Actor::new(s, a, 16, &mut rng);
        let target_critic = Critic::new(s, a, 16, &mut rng);
        let gamma = rng.random_range(0.1..0.99);
        let mut sum = 0.0;
        for i in 0..n {
            let next = batch.next_states.row(i);
            let bootstrap = target_critic
                .value(next, &target_actor.act(next).unwrap())
                .unwrap();
            let y = batch.rewards[i]
                + if batch.done[i] {
                    0.0
                } else {
                    gamma * bootstrap
                };
            let q = critic
                .value(batch.states.row(i), batch.actions.row(i))
                .unwrap();
            sum += (q - y) * (q - y);
        }
        let loss =
            critic_loss_value(&batch, &critic, &target_actor, &target_critic, gamma).unwrap();
        assert!((loss - sum / n as f64).abs() < 1e-10 * (1.0 + loss.abs()));
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..10 {
        let batch = random_batch(&mut rng, 4, 3, 2);
        let actor = Actor::new(3, 2, 8, &mut rng);
        let critic = Critic::new(3, 2, 8, &mut rng);
        let targets: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = gradcheck::check(&critic.params, 1e-6, 1e-8, |g, b| {
            critic_loss(g, b, &critic, &batch, &targets).map_err(autodiff)
        })
        .unwrap();
        assert!(c.max_rel_err < 1e-4, "critic trial {trial}: {c:?}");
        let a = gradcheck::check(&actor.params, 1e-6, 1e-8, |g, b| {
            let bc = critic.params.bind(g, false);
            actor_loss(g, b, &bc, &actor, &critic, &batch.states).map_err(autodiff)
        })
        .unwrap();
        assert!(a.max_rel_err < 1e-4, "actor trial {trial}: {a:?}");
    }
}

#[test]
fn constant_critic_gives_zero_actor_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let actor = Actor::new(3, 2, 8, &mut rng);
    let critic = constant_critic(3, 2, 2.5);
    let states = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let mut g = Graph::new();
    let ba = actor.params.bind(&mut g, true);
    let bc = critic.params.bind(&mut g, false);
    let loss = actor_loss(&mut g, &ba, &bc, &actor, &critic, &states).unwrap();
    assert_eq!(g.value(loss).item(), -2.5);
    let grads = ba.gradients(&g.backward(loss).unwrap(), &actor.params);
    assert!(grads.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn bandit_training_reduces_actor_loss() {
    let config = AgentConfig {
        batch_size: 32,
        warmup: 32,
        replay_capacity: 512,
        hidden: 32,
        actor_lr: 0.0,
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(2, 2, config, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let goal = [0.6, -0.4];
    let dist = |x: &[f64]| {
        x.iter()
            .zip(&goal)
            .map(|(a, g)| (a - g).powi(2))
            .sum::<f64>()
    };
    for _ in 0..512 {
        let state: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let reward = -dist(&action);
        agent
            .replay
            .push(Transition {
                next_state: state.clone(),
                state,
                action,
                reward,
                done: true,
            })
            .unwrap();
    }
    for _ in 0..400 {
        let b = agent.replay.sample(32, &mut rng).unwrap();
        agent.update(&b).unwrap();
    }

    let states = agent.replay.sample(64, &mut rng).unwrap().states;
    let loss_of = |actor: &Actor| {
        let mut g = Graph::new();
        let ba = actor.params.bind(&mut g, false);
        let bc = agent.critic.params.bind(&mut g, false);
        let loss = actor_loss(&mut g, &ba, &bc, actor, &agent.critic, &states).unwrap();
        g.value(loss).item()
    };
    let mut actor = agent.actor.clone();
    let before = loss_of(&actor);
    let start_gap = dist(&actor.act(&[0.0, 0.0]).unwrap());
    let mut adam = Adam::new(1e-3);
    for _ in 0..200 {
        let mut g = Graph::new();
        let ba = actor.params.bind(&mut g, true);
        let bc = agent.critic.params.bind(&mut g, false);
        let loss = actor_loss(&mut g, &ba, &bc, &actor, &agent.critic, &states).unwrap();
        let grads = ba.gradients(&g.backward(loss).unwrap(), &actor.params);
        adam.step(&mut actor.params, &grads).unwrap();
    }
    let after = loss_of(&actor);
    assert!(after < before, "{before} -> {after}");
    let end_gap = dist(&actor.act(&[0.0, 0.0]).unwrap());
    assert!(end_gap < start_gap, "{start_gap} -> {end_gap}");
}

#[test]
fn soft_update_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let online = Actor::new(3, 2, 4, &mut rng).params;
    let original = Actor::new(3, 2, 4, &mut rng).params;

    let mut t = original.clone();
    soft_update(&mut t, &online, 1.0).unwrap();
    assert_eq!(t, online);
    let mut t = original.clone();
    soft_update(&mut t, &online, 0.0).unwrap();
    assert_eq!(t, original);

    let dist = |a: &ParamSet| -> f64 {
        a.tensors()
            .iter()
            .zip(online.tensors())
            .map(|(x, y)| x.max_abs_diff(y))
            .fold(0.0, f64::max)
    };
    let mut t = original.clone();
    let d0 = dist(&t);
    for _ in 0..20 {
        soft_update(&mut t, &online, 0.1).unwrap();
    }
    assert!((dist(&t) - d0 * 0.9f64.powi(20)).abs() < 1e-9);
    assert!(soft_update(&mut t, &online, 1.5).is_err());
}

#[test]
fn replay_samples_are_distinct_and_seeded() {
    let mut pool = ReplayPool::new(50).unwrap();
    for i in 0..80 {
        pool.push(Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward: i as f64,
            next_state: vec![i as f64 + 1.0],
            done: false,
        })
        .unwrap();
    }
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pool.sample_indices(50, &mut rng).unwrap()
    };
    let mut idx = draw(1);
    assert_eq!(idx, draw(1));
    idx.sort_unstable();
    idx.dedup();
    assert_eq!(idx.len(), 50);
    assert!(pool
        .sample_indices(51, &mut ChaCha8Rng::seed_from_u64(1))
        .is_err());
    assert!(pool
        .push(Transition {
            state: vec![0.0, 1.0],
            action: vec![0.0],
            reward: 0.0,
            next_state: vec![0.0, 1.0],
            done: false
        })
        .is_err());
}

proptest! {
    #[test]
    fn replay_is_a_ring(capacity in 1usize..40, pushes in 0usize..120) {
        let mut pool = ReplayPool::new(capacity).unwrap();
        for i in 0..pushes {
            pool.push(Transition {
                state: vec![i as f64],
                action: vec![0.0],
                reward: 0.0,
                next_state: vec![0.0],
                done: false,
            }).unwrap();
            prop_assert!(pool.len() <= capacity);
        }
        let kept: Vec<f64> = pool.iter().map(|t| t.state[0]).collect();
        let first = pushes.saturating_sub(capacity);
        let expected: Vec<f64> = (first..pushes).map(|i| i as f64).collect();
        prop_assert_eq!(kept, expected);
    }
}

fn small_setup() -> (Arc<GridCase>, Arc<RenewableSeries>) {
    let case = generate_case(3, &CaseSpec::small()).unwrap();
    let series = synth_series(7, case.n_new(), 300, &SynthProfile::default()).unwrap();
    (Arc::new(case), Arc::new(series))
}

#[test]
fn layout_offsets_follow_the_table() {
    let (case, _) = small_setup();
    let layout = StateLayout::new(&case, 10);
    let (g, b, m, l, r) = (12, 30, 41, 20, case.n_new());
    let expected = [
        ("gen_q", g),
        ("bus_v", b),
        ("branch_p_from", m),
        ("branch_q_from", m),
        ("branch_p_to", m),
        ("branch_q_to", m),
        ("branch_load_ratio", m),
        ("branch_current", m),
        ("load_p", l),
        ("load_q", l),
        ("grid_loss", 1),
        ("gen_p", g),
        ("gen_status", g),
        ("forecast", 10 * r),
    ];
    let mut offset = 0;
    for (name, len) in expected {
        let seg = layout.segment(name).unwrap();
        assert_eq!((seg.offset, seg.len), (offset, len), "{name}");
        offset += len;
    }
    assert_eq!(layout.len(), offset);
    assert_eq!(layout.obs_len(), offset - 10 * r);
}

#[test]
fn assembled_state_is_layout_sensitive() {
    let (case, _) = small_setup();
    let layout = StateLayout::new(&case, 10);
    let scales = ObsScales::new(&case);
    let zeros: Vec<Vec<f64>> = layout.segments[..13]
        .iter()
        .map(|s| vec![0.0; s.len])
        .collect();
    let n = case.n_new();
    let s = assemble_state(&layout, &scales, &zeros, Some(&Tensor::zeros(&[10, n]))).unwrap();
    assert_eq!(s.0, vec![0.0; layout.len()]);

    let f = Tensor::from_rows(&(0..10).map(|r| vec![r as f64; n]).collect::<Vec<_>>()).unwrap();
    let mut rows: Vec<Vec<f64>> = (0..10).map(|r| f.row(r).to_vec()).collect();
    rows.swap(0, 9);
    let swapped = Tensor::from_rows(&rows).unwrap();
    let a = assemble_state(&layout, &scales, &zeros, Some(&f)).unwrap();
    let b = assemble_state(&layout, &scales, &zeros, Some(&swapped)).unwrap();
    assert_ne!(a, b);

    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(serde_json::from_str::<StateVector>(&json).unwrap(), a);

    assert!(assemble_state(&layout, &scales, &zeros, Some(&Tensor::zeros(&[9, n]))).is_err());
    assert!(assemble_state(&layout, &scales, &zeros, None).is_err());
}

fn episode(
    case: &Arc<GridCase>,
    series: &Arc<RenewableSeries>,
    mode: ForecastMode,
    patching: Option<NecessityConfig>,
    seed: u64,
) -> EpisodeRecord {
    let mut env = GridEnv::new(case.clone(), series.clone())
        .unwrap()
        .with_max_steps(Some(20));
    let dim = StateBuilder::new(case, mode).len();
    let config = AgentConfig {
        batch_size: 4,
        warmup: 4,
        hidden: 16,
        ..AgentConfig::default()
    };
    let mut agent = Agent::new(dim, case.n_gen(), config, seed).unwrap();
    let mut conformer = Conformer::new(5.0, mode.rows().max(1));
    let options = EpisodeOptions {
        start_day: 100,
        forecast: mode,
        patching,
        policy: Policy::Agent,
        sigma: 0.1,
        learn: true,
    };
    run_episode(
        &mut env,
        &mut agent,
        &mut conformer,
        &Persistence { horizon: 15 },
        &options,
    )
    .unwrap()
}

#[test]
fn untrained_agent_steps_the_minimal_case() {
    let case = Arc::new(generate_case(1, &CaseSpec::minimal()).unwrap());
    let series = Arc::new(synth_series(2, 1, 300, &SynthProfile::default()).unwrap());
    let rec = episode(&case, &series, ForecastMode::Off, None, 1);
    assert!(rec.scores.steps >= 1);
    assert!(rec.trace.iter().all(|s| s.limits_ok));
}

#[test]
fn episodes_are_reproducible() {
    let (case, series) = small_setup();
    let patch = NecessityConfig {
        n_dis: 5,
        ..NecessityConfig::default()
    };
    let a = episode(&case, &series, ForecastMode::TenDay, Some(patch.clone()), 4);
    let b = episode(&case, &series, ForecastMode::TenDay, Some(patch), 4);
    assert_eq!(a, b);
    assert!(a.trace.iter().all(|s| s.limits_ok && s.weights.is_some()));
    assert!(a.trace.iter().all(|s| s.selected.len() <= 5));
}
