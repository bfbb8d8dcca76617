//! Oracle and invariant suites behind the `check` command.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::preset::ExperimentPreset;
use crate::config::EnvConfig;
use crate::coselect::{co_select, SelectionInstance};
use crate::error::Result;
use crate::hybrid::{final_decision, map_user_action, refine, state_dim, Candidate, ServerBudget, UserAction};
use crate::replay::{chi_square, chi_square_critical, PriorityBuffer, PriorityConfig};
use crate::simcore::{schedule_server, Env, OffloadJob, ServerState, SlotDecision};
use crate::tinynet::gradcheck::{check_input, check_parameters};
use crate::tinynet::{Activation, Mlp};
use crate::trainer::{CriticLayout, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    fn timed(name: &str, start: Instant, passed: bool, detail: String) -> Self {
        CheckOutcome { name: name.into(), passed, detail, seconds: start.elapsed().as_secs_f64() }
    }
}

/// Event-driven multi-CPU FIFO simulation. The clock jumps between arrivals
/// and completions; at every event idle CPUs (lowest index first) take the
/// longest-waiting jobs. Returns `(user, start, finish)` in service order.
pub fn event_simulation(jobs: &[OffloadJob], cpu_free: &[f64]) -> Vec<(usize, f64, f64)> {
    let mut pending: Vec<OffloadJob> = jobs.to_vec();
    pending.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s).then(a.user.cmp(&b.user)));
    let mut pending: VecDeque<OffloadJob> = pending.into();
    let mut waiting: VecDeque<OffloadJob> = VecDeque::new();
    let mut free = cpu_free.to_vec();
    let mut out = Vec::with_capacity(jobs.len());
    let mut clock = f64::NEG_INFINITY;
    while !pending.is_empty() || !waiting.is_empty() {
        while pending.front().is_some_and(|j| j.arrival_s <= clock) {
            waiting.push_back(pending.pop_front().expect("checked"));
        }
        while !waiting.is_empty() {
            let Some(cpu) = (0..free.len()).find(|&c| free[c] <= clock) else { break };
            let job = waiting.pop_front().expect("checked");
            let finish = clock + job.processing_s;
            free[cpu] = finish;
            out.push((job.user, clock, finish));
        }
        let next_arrival = pending.front().map_or(f64::INFINITY, |j| j.arrival_s);
        let next_free = if waiting.is_empty() {
            f64::INFINITY
        } else {
            free.iter().copied().filter(|&t| t > clock).fold(f64::INFINITY, f64::min)
        };
        clock = next_arrival.min(next_free);
    }
    out
}

/// Heap scheduler against the event simulation on random instances.
pub fn queue_oracle(instances: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..instances {
        let cpus = rng.random_range(1..=8);
        let n = rng.random_range(0..=64);
        // Coarse grids make ties in arrival and free times common.
        let jobs: Vec<OffloadJob> = (0..n)
            .map(|user| OffloadJob {
                user,
                arrival_s: if rng.random_bool(0.3) { rng.random_range(0..8) as f64 * 0.25 } else { rng.random_range(0.0..2.0) },
                processing_s: if rng.random_bool(0.3) { 0.5 } else { rng.random_range(0.0..1.0) },
            })
            .collect();
        let mut server = ServerState::new(cpus, 1e12, 10, 4e9);
        let expected = event_simulation(&jobs, &server.cpu_free_times_s);
        let got = match schedule_server(&jobs, &mut server) {
            Ok(g) => g,
            Err(e) => return CheckOutcome::timed("queue oracle", start, false, format!("instance {i}: {e}")),
        };
        let got: Vec<(usize, f64, f64)> = got.iter().map(|j| (j.user, j.start_s, j.finish_s)).collect();
        if got != expected {
            return CheckOutcome::timed("queue oracle", start, false, format!("instance {i} ({cpus} CPUs, {n} jobs) differs"));
        }
    }
    CheckOutcome::timed("queue oracle", start, true, format!("{instances} instances identical"))
}

/// Random co-selection instances: termination within `users` rounds,
/// capacity, and a complete partition.
pub fn matching_invariants(instances: usize, users: usize, servers: usize, capacity: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rounds = 0;
    for i in 0..instances {
        let table = |rng: &mut ChaCha8Rng, hi: f64| -> Vec<Vec<f64>> {
            (0..users).map(|_| (0..servers).map(|_| rng.random_range(0.0..hi)).collect()).collect()
        };
        let instance = SelectionInstance {
            delay_s: table(&mut rng, 20.0),
            energy_j: table(&mut rng, 5.0),
            capacity,
            rho1: 0.5,
            rho2: 0.5,
        };
        let fallback = servers * capacity < users;
        let m = match co_select(&instance, fallback) {
            Ok(m) => m,
            Err(e) => return CheckOutcome::timed("matching invariants", start, false, format!("instance {i}: {e}")),
        };
        max_rounds = max_rounds.max(m.rounds);
        let problem = if m.rounds > users {
            Some(format!("{} rounds", m.rounds))
        } else if let Err(e) = m.check(capacity) {
            Some(e.to_string())
        } else if !fallback && m.assignment.iter().any(Option::is_none) {
            Some("unassigned user".into())
        } else {
            None
        };
        if let Some(p) = problem {
            return CheckOutcome::timed("matching invariants", start, false, format!("instance {i}: {p}"));
        }
    }
    CheckOutcome::timed(
        "matching invariants",
        start,
        true,
        format!("{instances} instances, at most {max_rounds} rounds"),
    )
}

/// Network shapes used by the trainer for an environment.
pub fn deployed_shapes(env: &EnvConfig, hidden: &[usize]) -> Vec<(Vec<usize>, Activation)> {
    let sd = state_dim(env.num_servers);
    let critic_in = CriticLayout::new(sd, env.max_users_per_server).input_dim();
    let with = |input: usize, output: usize| {
        let mut w = vec![input];
        w.extend_from_slice(hidden);
        w.push(output);
        w
    };
    vec![(with(sd, 3), Activation::Sigmoid), (with(critic_in, 1), Activation::Identity)]
}

/// Finite-difference checks of parameter and input gradients on random
/// networks of every deployed shape.
pub fn gradient_check(nets_per_shape: usize, per_layer: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = TrainConfig::default().hidden;
    let mut shapes = Vec::new();
    for p in [ExperimentPreset::paper(), ExperimentPreset::smoke()] {
        shapes.extend(deployed_shapes(&p.env, &hidden));
    }
    let mut worst: f64 = 0.0;
    let mut nets = 0;
    let (mut checked, mut skipped) = (0, 0);
    for (widths, output) in &shapes {
        for _ in 0..nets_per_shape {
            let net = Mlp::new(widths, Activation::Relu, *output, &mut rng);
            let x = Array2::from_shape_fn((3, widths[0]), |_| rng.random_range(0.0..1.0));
            let up = Array2::from_shape_fn((3, *widths.last().expect("widths")), |_| rng.random_range(-1.0..1.0));
            let run = || -> Result<_> {
                let mut r = ChaCha8Rng::seed_from_u64(nets as u64);
                let p = check_parameters(&net, x.view(), up.view(), 1e-5, Some(per_layer), &mut r)?;
                let i = check_input(&net, x.view(), up.view(), 1e-5)?;
                Ok((p.max_rel_error.max(i.max_rel_error), p.checked + i.checked, p.skipped + i.skipped))
            };
            match run() {
                Ok((e, c, s)) => {
                    worst = worst.max(e);
                    checked += c;
                    skipped += s;
                }
                Err(e) => return CheckOutcome::timed("gradient check", start, false, e.to_string()),
            }
            nets += 1;
        }
    }
    // Kink-straddling probes are excluded; too many would make the check
    // vacuous.
    let passed = worst < 1e-4 && skipped * 20 <= checked;
    CheckOutcome::timed(
        "gradient check",
        start,
        passed,
        format!(
            "{nets} nets over {} shapes, {checked} probes, {skipped} straddled a ReLU kink, max relative error {worst:.3e}",
            shapes.len()
        ),
    )
}

/// Chi-square goodness of fit of replay sampling frequencies against the
/// priority-proportional law.
pub fn sampling_law(vectors: usize, items: usize, draws: usize, alpha: f64, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let critical = chi_square_critical(items - 1, alpha);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for v in 0..vectors {
        let mut buf = match PriorityBuffer::new(PriorityConfig { capacity: items, ..PriorityConfig::default() }) {
            Ok(b) => b,
            Err(e) => return CheckOutcome::timed("sampling law", start, false, e.to_string()),
        };
        let refs: Vec<_> = (0..items).map(|i| buf.push(i, 0.0)).collect();
        let rewards: Vec<f64> = (0..items).map(|_| rng.random_range(-20.0..0.0)).collect();
        let tds: Vec<f64> = (0..items).map(|_| rng.random_range(-10.0..10.0)).collect();
        if let Err(e) = buf.update_priorities(&refs, &rewards, &tds) {
            return CheckOutcome::timed("sampling law", start, false, e.to_string());
        }
        let probs = buf.probabilities();
        let mut counts = vec![0usize; items];
        let mut drawn = 0;
        while drawn < draws {
            let n = items.min(draws - drawn);
            match buf.sample(n, &mut rng) {
                Ok(s) => s.iter().for_each(|r| counts[r.slot] += 1),
                Err(e) => return CheckOutcome::timed("sampling law", start, false, e.to_string()),
            }
            drawn += n;
        }
        let stat = chi_square(&counts, &probs);
        worst = worst.max(stat);
        if stat > critical {
            failures.push(v);
        }
    }
    CheckOutcome::timed(
        "sampling law",
        start,
        failures.is_empty(),
        format!(
            "{vectors} vectors x {draws} draws, max chi2 {worst:.2} vs critical {critical:.2}, rejected {failures:?}"
        ),
    )
}

/// Random slots with random actions and random approval scores: batteries
/// stay in `[0, b_max]`, penalties are non-positive, and every played
/// decision respects the allocation budgets, subchannel and storage limits.
pub fn environment_invariants(slots: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let smoke = ExperimentPreset::smoke().env;
    let tight = EnvConfig { subchannels: 2, server_storage_mb: 60.0, ..smoke.clone() };
    let configs = [EnvConfig::default(), smoke, tight, ExperimentPreset::stress().env];
    let per_config = slots.div_ceil(configs.len());
    let mut played = 0;
    for (ci, base) in configs.iter().enumerate() {
        let cfg = EnvConfig { seed: seed.wrapping_add(ci as u64), ..base.clone() };
        let mut env = match Env::new(cfg.clone()) {
            Ok(e) => e,
            Err(e) => return CheckOutcome::timed("environment invariants", start, false, e.to_string()),
        };
        env.reset();
        for _ in 0..per_config {
            let result = play_random_slot(&mut env, &cfg, &mut rng);
            match result {
                Ok(true) => {
                    env.reset();
                }
                Ok(false) => {}
                Err(e) => {
                    return CheckOutcome::timed("environment invariants", start, false, format!("config {ci}: {e}"))
                }
            }
            played += 1;
        }
    }
    CheckOutcome::timed("environment invariants", start, true, format!("{played} slots"))
}

fn play_random_slot(env: &mut Env, cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Result<bool> {
    use crate::error::Error;
    let obs = env.observations();
    let matching = co_select(&SelectionInstance::from_observations(cfg, &obs), true)?;
    let actions: Vec<UserAction> =
        (0..cfg.num_users).map(|_| UserAction { offload: rng.random(), freq: rng.random(), power: rng.random() }).collect();
    let mapped: Vec<_> = actions.iter().map(|a| map_user_action(a, cfg)).collect();
    let budget = ServerBudget { subchannels: cfg.subchannels, storage_bits: cfg.storage_bits() };
    let mut approved = vec![false; cfg.num_users];
    for roster in &matching.rosters {
        let cands: Vec<Candidate> = roster
            .iter()
            .filter(|&&u| mapped[u].offload_request)
            .map(|&u| Candidate { user: u, size_bits: obs[u].task.size_bits, score: rng.random() })
            .collect();
        for u in refine(roster, budget, &cands)?.approved_users() {
            approved[u] = true;
        }
    }
    let decisions: Vec<SlotDecision> = (0..cfg.num_users)
        .map(|n| SlotDecision {
            user: n,
            offload: final_decision(mapped[n].offload_request, approved[n]),
            server: matching.assignment[n],
            local_freq_hz: mapped[n].local_freq_hz,
            tx_power_dbm: mapped[n].tx_power_dbm,
        })
        .collect();
    for d in &decisions {
        if !cfg.local_freq_hz().contains(d.local_freq_hz) || !cfg.tx_power_dbm.contains(d.tx_power_dbm) {
            return Err(Error::Constraint(format!("user {} allocation outside budget", d.user)));
        }
    }
    for m in 0..cfg.num_servers {
        let offloads: Vec<usize> = decisions.iter().filter(|d| d.offload && d.server == Some(m)).map(|d| d.user).collect();
        let bits: f64 = offloads.iter().map(|&u| obs[u].task.size_bits).sum();
        if offloads.len() > cfg.subchannels || bits > cfg.storage_bits() {
            return Err(Error::Constraint(format!("server {m} over its subchannel or storage limit")));
        }
    }
    let step = env.advance_slot(&decisions)?;
    for o in &step.outcomes {
        if !(0.0..=cfg.b_max_j()).contains(&o.battery_j) {
            return Err(Error::Constraint(format!("user {} battery {} outside [0, b_max]", o.user, o.battery_j)));
        }
        if !(o.penalty <= 0.0) {
            return Err(Error::Constraint(format!("user {} penalty {} is positive", o.user, o.penalty)));
        }
    }
    Ok(step.done)
}

/// Every suite at the sizes used by the acceptance tests.
pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        queue_oracle(1000, seed),
        matching_invariants(100, 48, 3, 16, seed),
        gradient_check(10, 8, seed),
        sampling_law(20, 50, 100_000, 0.01, seed),
        environment_invariants(10_000, seed),
    ]
}
