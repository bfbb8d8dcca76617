use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use log::info;
use serde::Serialize;

use super::aggregate::{aggregate, mean_std, MetricsTable, Summary, FINAL_WINDOW};
use super::preset::{ExperimentPreset, RunSpec};
use super::run::{execute, parallel_map, RunOptions, RunOutput};
use super::smooth::{downsample, smooth, DEFAULT_DOWNSAMPLE, DEFAULT_POLYORDER, DEFAULT_WINDOW};
use crate::coselect::{co_select_logged, Matching, SelectionInstance};
use crate::error::Result;
use crate::simcore::Env;
use crate::trainer::Policy;

/// Runs every (policy, seed) pair of the preset into `out_dir`.
pub fn run_grid(preset: &ExperimentPreset, command: &str, out_dir: &Path, opts: RunOptions) -> Result<Vec<RunOutput>> {
    let specs: Vec<RunSpec> = preset
        .policies
        .iter()
        .flat_map(|&p| preset.seeds.iter().map(move |&s| (p, s)))
        .map(|(p, s)| preset.run_spec(p, s))
        .collect();
    parallel_map(&specs, |spec| execute(spec, command, out_dir, opts)).into_iter().collect()
}

#[derive(Debug, Clone, Serialize)]
struct CurveRow {
    policy: Policy,
    episode: usize,
    smoothed_mean_reward: f64,
}

/// All policies over all seeds, then `summary.csv` (mean and std per
/// episode), `curves.csv` (smoothed and downsampled reward curves) and
/// `win_rates.json`.
pub fn compare(preset: &ExperimentPreset, command: &str, out_dir: &Path, opts: RunOptions) -> Result<Summary> {
    let runs = run_grid(preset, command, out_dir, opts)?;
    let mut table = MetricsTable::new();
    for r in &runs {
        table.insert_run(r.spec.policy, r.spec.seed, &r.log.rows)?;
    }
    let summary = aggregate(&table, Policy::Ucms, FINAL_WINDOW)?;
    summary.write_csv(BufWriter::new(File::create(out_dir.join("summary.csv"))?))?;

    let mut curves = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join("curves.csv"))?));
    for policy in table.policies() {
        let smoothed = smooth(&summary.curve(policy), DEFAULT_WINDOW, DEFAULT_POLYORDER)?;
        let episodes: Vec<f64> = (0..smoothed.len()).map(|e| e as f64).collect();
        for (e, v) in downsample(&episodes, DEFAULT_DOWNSAMPLE).iter().zip(downsample(&smoothed, DEFAULT_DOWNSAMPLE)) {
            curves.serialize(CurveRow { policy, episode: *e as usize, smoothed_mean_reward: v })?;
        }
    }
    curves.flush()?;
    fs::write(out_dir.join("win_rates.json"), serde_json::to_string_pretty(&summary.win_rates)? + "\n")?;
    for w in &summary.win_rates {
        info!("UCMS >= {} in {}/{} seeds", w.baseline, w.wins, w.seeds);
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub num_users: usize,
    pub seeds: usize,
    /// Mean over seeds of the per-episode total cost in the final window.
    pub mean_total_cost: f64,
    pub std_total_cost: f64,
}

/// User counts `from, from + step, ..., <= to`.
pub fn user_counts(from: usize, to: usize, step: usize) -> Vec<usize> {
    (from..=to).step_by(step.max(1)).collect()
}

/// Trains `policy` at every user count and writes `sweep.csv` with one row
/// per count.
pub fn sweep_users(
    preset: &ExperimentPreset,
    counts: &[usize],
    policy: Policy,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(counts.len());
    for &n in counts {
        let mut p = preset.clone();
        p.env.num_users = n;
        p.policies = vec![policy];
        p.validate()?;
        let runs = run_grid(&p, "sweep-users", &out_dir.join(format!("n{n}")), opts)?;
        let per_seed: Vec<f64> = runs
            .iter()
            .map(|r| {
                let c = &r.log.total_costs;
                let tail = &c[c.len().saturating_sub(FINAL_WINDOW)..];
                tail.iter().sum::<f64>() / tail.len().max(1) as f64
            })
            .collect();
        let (mean, std) = mean_std(&per_seed);
        info!("N = {n}: mean total cost {mean:.3}");
        rows.push(SweepRow { num_users: n, seeds: per_seed.len(), mean_total_cost: mean, std_total_cost: std });
    }
    fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out_dir.join("sweep.csv"))?));
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

/// Co-selection on the first slot of a fresh episode, with the full event
/// log.
pub fn debug_match(preset: &ExperimentPreset, seed: u64) -> Result<Matching> {
    let cfg = crate::config::EnvConfig { seed, ..preset.env.clone() };
    let mut env = Env::new(cfg.clone())?;
    let obs = env.reset();
    co_select_logged(&SelectionInstance::from_observations(&cfg, &obs), true)
}

pub const PLOT_SCRIPT_NAME: &str = "plot_curves.py";

/// Writes a standalone matplotlib script that plots `summary.csv`,
/// `curves.csv` and `sweep.csv` from the directory it sits in.
pub fn emit_plot_script(out_dir: &Path) -> Result<std::path::PathBuf> {
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(PLOT_SCRIPT_NAME);
    fs::write(&path, PLOT_SCRIPT)?;
    Ok(path)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots the CSV outputs found next to this script."""
import csv
import os
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def read(name):
    path = os.path.join(here, name)
    if not os.path.exists(path):
        return None
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


summary = read("summary.csv")
if summary:
    fig, ax = plt.subplots(1, 2, figsize=(11, 4))
    by_policy = defaultdict(list)
    for r in summary:
        by_policy[r["policy"]].append(r)
    for policy, rows in by_policy.items():
        ep = [int(r["episode"]) for r in rows]
        mean = [float(r["mean_reward"]) for r in rows]
        std = [float(r["std_reward"]) for r in rows]
        ax[0].plot(ep, mean, label=policy)
        ax[0].fill_between(ep, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)], alpha=0.15)
        ax[1].plot(ep, [float(r["mean_cost"]) for r in rows], label=policy)
    ax[0].set_xlabel("episode")
    ax[0].set_ylabel("mean reward")
    ax[1].set_xlabel("episode")
    ax[1].set_ylabel("mean cost")
    ax[0].legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, "summary.png"), dpi=120)

curves = read("curves.csv")
if curves:
    fig, ax = plt.subplots(figsize=(6, 4))
    by_policy = defaultdict(list)
    for r in curves:
        by_policy[r["policy"]].append((int(r["episode"]), float(r["smoothed_mean_reward"])))
    for policy, pts in by_policy.items():
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=policy)
    ax.set_xlabel("episode")
    ax.set_ylabel("smoothed mean reward")
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(here, "curves.png"), dpi=120)

sweep = read("sweep.csv")
if sweep:
    fig, ax = plt.subplots(figsize=(6, 4))
    n = [int(r["num_users"]) for r in sweep]
    ax.errorbar(n, [float(r["mean_total_cost"]) for r in sweep], yerr=[float(r["std_total_cost"]) for r in sweep], marker="o")
    ax.set_xlabel("users")
    ax.set_ylabel("total cost per episode")
    fig.tight_layout()
    fig.savefig(os.path.join(here, "sweep.png"), dpi=120)

if not (summary or curves or sweep):
    sys.exit("no CSV outputs found next to this script")
"#;
