//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use edge_offload::config::EnvConfig;
use edge_offload::harness::checks::{
    environment_invariants, gradient_check, matching_invariants, queue_oracle, sampling_law,
};
use edge_offload::harness::{execute, rerun, ExperimentPreset, RunOptions, RunOutput, FINAL_WINDOW};
use edge_offload::simcore::{local_delay, local_energy, uplink_rate, TaskSpec};
use edge_offload::trainer::Policy;

// glibc malloc fragments badly under the training loop's allocation pattern.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

const SEEDS: u64 = 10;
const SWEEP_SEEDS: u64 = 5;
const SWEEP_USERS: [usize; 3] = [12, 24, 36];
const SWEEP_EPISODES: usize = 30;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    seconds: f64,
    detail: String,
}

fn report(lines: &mut Vec<Line>, id: usize, name: &'static str, start: Instant, passed: bool, detail: String) {
    let line = Line { id, name, passed, seconds: start.elapsed().as_secs_f64(), detail };
    println!(
        "{} criterion {:>2} {:<28} {:>8.2}s  {}",
        if line.passed { "PASS" } else { "FAIL" },
        line.id,
        line.name,
        line.seconds,
        line.detail
    );
    lines.push(line);
}

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

fn unit_spot_checks() -> (bool, String) {
    let task = TaskSpec { size_bits: 8.0e6, cycles_per_bit: 500.0, deadline_s: 1.0 };
    let delay = local_delay(&task, 1.0e9).unwrap_or(f64::NAN);
    let energy = local_energy(&task, 1.0e9, 5e-27);
    let cfg = EnvConfig { bandwidth_mhz: 40.0, subchannels: 10, ..EnvConfig::default() };
    let rate = uplink_rate(24.0, 10.0, &cfg);
    let passed = close(delay, 4.0, 1e-12) && close(energy, 20.0, 1e-12) && close(rate, 7.249e6, 1e-3);
    (passed, format!("delay {delay} s, energy {energy} J, rate {rate:.1} bps"))
}

fn train_all(preset: &ExperimentPreset, policy: Policy, out: &Path) -> Vec<RunOutput> {
    (0..SEEDS)
        .map(|s| execute(&preset.run_spec(policy, s), "acceptance", out, RunOptions::default()).expect("training run"))
        .collect()
}

fn final_window(run: &RunOutput) -> f64 {
    let rows = &run.log.rows;
    let tail = &rows[rows.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len() as f64
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    let dir = tempfile::tempdir().expect("temp dir");

    let t = Instant::now();
    let c = queue_oracle(1000, 0);
    report(&mut lines, 1, "queue oracle", t, c.passed && c.seconds < 5.0, c.detail);

    let t = Instant::now();
    let (ok, detail) = unit_spot_checks();
    report(&mut lines, 2, "unit spot checks", t, ok, detail);

    let t = Instant::now();
    let c = matching_invariants(100, 48, 3, 16, 0);
    report(&mut lines, 3, "matching invariants", t, c.passed && c.seconds < 2.0, c.detail);

    let t = Instant::now();
    let c = gradient_check(10, 8, 0);
    report(&mut lines, 4, "gradient check", t, c.passed && c.seconds < 30.0, c.detail);

    let t = Instant::now();
    let c = sampling_law(20, 50, 100_000, 0.01, 0);
    report(&mut lines, 5, "sampling law", t, c.passed && c.seconds < 10.0, c.detail);

    let t = Instant::now();
    let c = environment_invariants(10_000, 0);
    report(&mut lines, 6, "environment invariants", t, c.passed && c.seconds < 20.0, c.detail);

    let smoke = ExperimentPreset::smoke();
    let t = Instant::now();
    let ucms = train_all(&smoke, Policy::Ucms, &dir.path().join("ucms"));
    let improved = ucms.iter().filter(|r| r.log.mean_reward(250..300) > r.log.mean_reward(0..50)).count();
    let detail = ucms
        .iter()
        .map(|r| format!("{:.0}->{:.0}", r.log.mean_reward(0..50), r.log.mean_reward(250..300)))
        .collect::<Vec<_>>()
        .join(" ");
    let elapsed = t.elapsed().as_secs_f64();
    report(
        &mut lines,
        7,
        "convergence trend",
        t,
        improved >= 9 && elapsed < 600.0,
        format!("{improved}/{SEEDS} seeds improved: {detail}"),
    );

    let t = Instant::now();
    let rd = train_all(&smoke, Policy::RdUcms, &dir.path().join("rd_ucms"));
    let wins = ucms.iter().zip(&rd).filter(|(u, r)| final_window(u) >= final_window(r)).count();
    let detail = ucms
        .iter()
        .zip(&rd)
        .map(|(u, r)| format!("{:.0}/{:.0}", final_window(u), final_window(r)))
        .collect::<Vec<_>>()
        .join(" ");
    report(
        &mut lines,
        8,
        "co-selection ablation",
        t,
        wins >= 7,
        format!("UCMS >= RD_UCMS in {wins}/{SEEDS} seeds (UCMS/RD_UCMS): {detail}"),
    );

    let t = Instant::now();
    let mut sweep = smoke.clone();
    sweep.train.episodes = SWEEP_EPISODES;
    let costs: Vec<f64> = SWEEP_USERS
        .iter()
        .map(|&n| {
            let mut p = sweep.clone();
            p.env.num_users = n;
            let per_seed: Vec<f64> = (0..SWEEP_SEEDS)
                .map(|s| {
                    let out = dir.path().join(format!("sweep_n{n}"));
                    let run = execute(&p.run_spec(Policy::Ucms, s), "acceptance", &out, RunOptions::default())
                        .expect("sweep run");
                    let c = &run.log.total_costs;
                    let tail = &c[c.len().saturating_sub(FINAL_WINDOW)..];
                    tail.iter().sum::<f64>() / tail.len() as f64
                })
                .collect();
            per_seed.iter().sum::<f64>() / per_seed.len() as f64
        })
        .collect();
    let increasing = costs.windows(2).all(|w| w[1] > w[0]);
    let detail = SWEEP_USERS.iter().zip(&costs).map(|(n, c)| format!("N={n}: {c:.1}")).collect::<Vec<_>>().join(", ");
    report(&mut lines, 9, "load trend", t, increasing, detail);

    let t = Instant::now();
    let first = &ucms[0];
    let again = rerun(&first.manifest_path, &dir.path().join("rerun")).expect("rerun");
    let identical = fs::read(&first.csv_path).ok() == fs::read(&again.csv_path).ok();
    report(
        &mut lines,
        10,
        "determinism",
        t,
        identical,
        format!("{} rerun from manifest, CSV bytes identical: {identical}", first.spec.stem()),
    );

    let failed: Vec<String> = lines.iter().filter(|l| !l.passed).map(|l| format!("{} ({})", l.id, l.name)).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", lines.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
