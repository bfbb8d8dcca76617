use edge_offload::config::EnvConfig;
use edge_offload::harness::ExperimentPreset;
use edge_offload::simcore::{cost, penalty};
use edge_offload::trainer::{AgentBundle, CriticLayout, Experience, Policy, TrainConfig, Trainer};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_train() -> TrainConfig {
    TrainConfig { episodes: 6, batch_size: 16, hidden: vec![16, 16], train_rounds: 2, ..TrainConfig::default() }
}

#[test]
fn same_seed_gives_identical_runs() {
    for policy in [Policy::Ucms, Policy::RdUcms] {
        let run = || {
            let mut t = Trainer::new(ExperimentPreset::smoke().env, small_train(), policy).unwrap();
            let log = t.train().unwrap();
            (log, t.bundle().actors[0].params_flat(), t.bundle().server_critic.params_flat())
        };
        let (a, b) = (run(), run());
        assert_eq!(format!("{:?}", a.0), format!("{:?}", b.0));
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
    }
}

#[test]
fn episode_reward_matches_recomputed_outcomes() {
    let env = ExperimentPreset::stress().env;
    let mut t = Trainer::new(env.clone(), small_train(), Policy::Ucms).unwrap();
    for _ in 0..4 {
        let report = t.run_episode().unwrap();
        t.update().unwrap();
        let mut sum = 0.0;
        let mut count = 0.0;
        for (slot, deadlines) in report.outcomes.iter().zip(&report.deadlines) {
            let costs: Vec<f64> = slot.iter().map(|o| cost(o.delay_s, o.energy_j, env.rho1, env.rho2)).collect();
            let mean_cost = costs.iter().sum::<f64>() / costs.len() as f64;
            for (o, &d) in slot.iter().zip(deadlines) {
                let p = penalty(o.delay_s, d, o.battery_j, env.b_min_j(), env.rho1, env.rho2);
                assert!(p <= 0.0);
                assert_eq!(o.timed_out, o.delay_s > d);
                sum += -mean_cost + p;
                count += 1.0;
            }
        }
        let expected = sum / count;
        assert!((report.metrics.mean_reward - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }
}

fn single_user_env() -> EnvConfig {
    EnvConfig {
        num_users: 1,
        num_servers: 1,
        max_users_per_server: 1,
        cpus_per_server: 1,
        subchannels: 10,
        server_storage_mb: 1000.0,
        ..EnvConfig::default()
    }
}

#[test]
fn single_user_requests_are_always_approved() {
    let mut t = Trainer::new(single_user_env(), small_train(), Policy::Ucms).unwrap();
    t.set_trace(true);
    let mut requests = 0;
    for _ in 0..20 {
        let r = t.run_episode().unwrap();
        t.update().unwrap();
        for s in &r.traces {
            assert_eq!(s.offload_requests, s.offloaded);
            requests += s.offload_requests.iter().filter(|&&x| x).count();
        }
    }
    assert!(requests > 0);
}

/// With one user and one server the critic sees `[s, a, s, a]` when the
/// user offloaded and `[s, a, 0, 0]` otherwise, and the actor follows the
/// deterministic policy gradient of that critic.
#[test]
fn single_user_update_is_ddpg() {
    let sd = 7;
    let cfg = TrainConfig { hidden: vec![12, 10], ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layout = CriticLayout::new(sd, 1);
    assert_eq!(layout.input_dim(), 2 * (sd + 3));
    let mut bundle = AgentBundle::new(1, layout, &cfg, &mut rng);
    let batch: Vec<Experience> = (0..8)
        .map(|i| Experience {
            states: vec![(0..sd).map(|_| rng.random()).collect()],
            actions: vec![[rng.random(), rng.random(), rng.random()]],
            assignment: vec![Some(0)],
            offloaded: vec![i % 2 == 0],
            rewards: vec![-rng.random::<f64>() * 300.0],
            next_states: vec![(0..sd).map(|_| rng.random()).collect()],
            terminal: i == 7,
        })
        .collect();
    let refs: Vec<&Experience> = batch.iter().collect();
    let weights = vec![1.0; batch.len()];
    let actor_before = bundle.actors[0].clone();

    // Target: y = scale * r + gamma * Q'([s', mu'(s'), candidate]).
    let row = |s: &[f64], a: &[f64], offloaded: bool| -> Vec<f64> {
        let mut v: Vec<f64> = s.iter().chain(a).copied().collect();
        if offloaded {
            v.extend(s.iter().chain(a));
        } else {
            v.extend(std::iter::repeat_n(0.0, sd + 3));
        }
        v
    };
    let targets = bundle.target_q(&refs, cfg.gamma, cfg.reward_scale).unwrap();
    for (e, y) in batch.iter().zip(&targets) {
        let a_next = bundle.target_actors[0].forward_one(&e.next_states[0]).unwrap();
        let q = bundle.target_server_critic.forward_one(&row(&e.next_states[0], &a_next, e.offloaded[0])).unwrap()[0];
        let expected = cfg.reward_scale * e.rewards[0] + if e.terminal { 0.0 } else { cfg.gamma * q };
        assert!((y - expected).abs() < 1e-12);
    }

    bundle.train_round(&refs, &weights, &cfg).unwrap();

    // Policy gradient of -mean Q through the updated server critic.
    let critic = &bundle.server_critic;
    let states = Array2::from_shape_fn((batch.len(), sd), |(b, k)| batch[b].states[0][k]);
    let trace = actor_before.forward_trace(states.view()).unwrap();
    let actions = trace.output().clone();
    let mut da = Array2::zeros((batch.len(), 3));
    for (b, e) in batch.iter().enumerate() {
        let a: Vec<f64> = actions.row(b).to_vec();
        let x = Array2::from_shape_vec((1, 2 * (sd + 3)), row(&e.states[0], &a, e.offloaded[0])).unwrap();
        let ct = critic.forward_trace(x.view()).unwrap();
        let dx = critic.input_gradient(&ct, Array2::from_elem((1, 1), -1.0 / batch.len() as f64).view()).unwrap();
        for k in 0..3 {
            da[[b, k]] = dx[[0, sd + k]] + if e.offloaded[0] { dx[[0, 2 * sd + 3 + k]] } else { 0.0 };
        }
    }
    let (grads, _) = actor_before.backward(&trace, da.view()).unwrap();
    // First Adam step: delta = -lr * g / (|g| + eps).
    let expected: Vec<f64> = actor_before
        .params_flat()
        .iter()
        .zip(grads.flatten())
        .map(|(p, g)| p - cfg.actor_lr * g / (g.abs() + 1e-8))
        .collect();
    for (got, want) in bundle.actors[0].params_flat().iter().zip(&expected) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn gradient_norms_stay_finite_over_1000_rounds() {
    let preset = ExperimentPreset::smoke();
    let cfg = TrainConfig { episodes: 0, ..preset.train.clone() };
    let mut t = Trainer::new(preset.env.clone(), cfg, Policy::Ucms).unwrap();
    let mut rounds = 0;
    while rounds < 1000 {
        t.run_episode().unwrap();
        for s in t.update().unwrap() {
            assert!(s.actor_grad_norm.is_finite());
            assert!(s.server_critic_loss.is_finite() && s.user_critic_loss.is_finite());
            rounds += 1;
        }
    }
    assert!(t.bundle().is_finite());
}
