use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trainer::{EpisodeMetrics, Policy};

/// Episodes at the end of a run that count as its final window.
pub const FINAL_WINDOW: usize = 50;

/// Training-log rows keyed by `(policy, seed, episode)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    rows: BTreeMap<(Policy, u64, usize), EpisodeMetrics>,
}

impl MetricsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert_run(&mut self, policy: Policy, seed: u64, rows: &[EpisodeMetrics]) -> Result<()> {
        for r in rows {
            if self.rows.insert((policy, seed, r.episode), r.clone()).is_some() {
                return Err(Error::Structure(format!("duplicate row for {policy} seed {seed} episode {}", r.episode)));
            }
        }
        Ok(())
    }

    pub fn policies(&self) -> Vec<Policy> {
        let mut p: Vec<Policy> = self.rows.keys().map(|k| k.0).collect();
        p.dedup();
        p
    }

    pub fn seeds(&self, policy: Policy) -> Vec<u64> {
        let mut s: Vec<u64> = self.rows.keys().filter(|k| k.0 == policy).map(|k| k.1).collect();
        s.dedup();
        s
    }

    /// Rows of one run in episode order.
    pub fn run(&self, policy: Policy, seed: u64) -> Vec<&EpisodeMetrics> {
        self.rows.range((policy, seed, 0)..=(policy, seed, usize::MAX)).map(|(_, r)| r).collect()
    }

    /// Mean reward over a run's last `window` episodes.
    pub fn final_window_reward(&self, policy: Policy, seed: u64, window: usize) -> Option<f64> {
        let run = self.run(policy, seed);
        if run.is_empty() {
            return None;
        }
        let tail = &run[run.len().saturating_sub(window)..];
        Some(tail.iter().map(|r| r.mean_reward).sum::<f64>() / tail.len() as f64)
    }
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub policy: Policy,
    pub episode: usize,
    pub seeds: usize,
    pub mean_reward: f64,
    pub std_reward: f64,
    pub mean_cost: f64,
    pub std_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WinRate {
    pub baseline: Policy,
    /// Seeds present for both policies.
    pub seeds: usize,
    /// Seeds where the reference policy's final-window reward is at least
    /// the baseline's.
    pub wins: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub reference: Policy,
    pub window: usize,
    pub win_rates: Vec<WinRate>,
}

impl Summary {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean-reward curve of one policy, by episode.
    pub fn curve(&self, policy: Policy) -> Vec<f64> {
        self.rows.iter().filter(|r| r.policy == policy).map(|r| r.mean_reward).collect()
    }
}

/// Per-policy, per-episode mean and standard deviation across seeds, and
/// the win rate of `reference` against every other policy.
pub fn aggregate(table: &MetricsTable, reference: Policy, window: usize) -> Result<Summary> {
    let mut rows = Vec::new();
    for policy in table.policies() {
        let seeds = table.seeds(policy);
        let runs: Vec<Vec<&EpisodeMetrics>> = seeds.iter().map(|&s| table.run(policy, s)).collect();
        let len = runs[0].len();
        if runs.iter().any(|r| r.len() != len) {
            return Err(Error::Structure(format!("{policy}: runs have different episode counts")));
        }
        for e in 0..len {
            let rewards: Vec<f64> = runs.iter().map(|r| r[e].mean_reward).collect();
            let costs: Vec<f64> = runs.iter().map(|r| r[e].mean_cost).collect();
            let (mean_reward, std_reward) = mean_std(&rewards);
            let (mean_cost, std_cost) = mean_std(&costs);
            rows.push(SummaryRow {
                policy,
                episode: runs[0][e].episode,
                seeds: runs.len(),
                mean_reward,
                std_reward,
                mean_cost,
                std_cost,
            });
        }
    }
    let mut win_rates = Vec::new();
    for baseline in table.policies().into_iter().filter(|&p| p != reference) {
        let mut seeds = 0;
        let mut wins = 0;
        for s in table.seeds(reference) {
            let (Some(a), Some(b)) =
                (table.final_window_reward(reference, s, window), table.final_window_reward(baseline, s, window))
            else {
                continue;
            };
            seeds += 1;
            if a >= b {
                wins += 1;
            }
        }
        let rate = if seeds == 0 { f64::NAN } else { wins as f64 / seeds as f64 };
        win_rates.push(WinRate { baseline, seeds, wins, rate });
    }
    Ok(Summary { rows, reference, window, win_rates })
}
