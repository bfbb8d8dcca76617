//! User-server co-selection.
//!
//! Users rank servers by their own weighted offload cost, servers rank
//! applicants by estimated offload delay. Each round every unmatched user
//! applies to its cheapest server that still has room; each server accepts
//! applicants in ascending delay until it is full and rejects the rest.
//! Acceptances are final, so every round that has applicants matches at
//! least one of them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::simcore::{estimate_offload, Observation};

/// Per-pair offload estimates for one slot. Indices are dense: users
/// `0..num_users()`, servers `0..num_servers()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionInstance {
    /// `delay_s[user][server]`: estimated total offload delay.
    pub delay_s: Vec<Vec<f64>>,
    /// `energy_j[user][server]`: estimated upload energy.
    pub energy_j: Vec<Vec<f64>>,
    /// Maximum connected users per server.
    pub capacity: usize,
    pub rho1: f64,
    pub rho2: f64,
}

impl SelectionInstance {
    /// Builds estimates from each device's current transmit power and
    /// channel gains, assuming idle servers.
    pub fn from_observations(cfg: &EnvConfig, obs: &[Observation]) -> Self {
        let mut delay_s = Vec::with_capacity(obs.len());
        let mut energy_j = Vec::with_capacity(obs.len());
        for o in obs {
            let (d, e): (Vec<f64>, Vec<f64>) = o
                .device
                .gains_db
                .iter()
                .map(|&g| {
                    let est = estimate_offload(&o.task, o.device.tx_power_dbm, g, cfg);
                    (est.total_s, est.energy_j)
                })
                .unzip();
            delay_s.push(d);
            energy_j.push(e);
        }
        SelectionInstance {
            delay_s,
            energy_j,
            capacity: cfg.max_users_per_server,
            rho1: cfg.rho1,
            rho2: cfg.rho2,
        }
    }

    pub fn num_users(&self) -> usize {
        self.delay_s.len()
    }

    pub fn num_servers(&self) -> usize {
        self.delay_s.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.num_servers();
        if self.energy_j.len() != self.delay_s.len() {
            return Err(Error::Structure("delay and energy tables differ in user count".into()));
        }
        for (n, (d, e)) in self.delay_s.iter().zip(&self.energy_j).enumerate() {
            if d.len() != m || e.len() != m {
                return Err(Error::Structure(format!("user {n} has a ragged estimate row")));
            }
            if d.iter().chain(e).any(|v| !(*v >= 0.0)) {
                return Err(Error::Domain(format!("user {n} has a negative or NaN estimate")));
            }
        }
        if self.capacity == 0 {
            return Err(Error::Structure("server capacity must be positive".into()));
        }
        Ok(())
    }

    /// The user's ranking key for a server: weighted delay plus energy.
    pub fn user_selection_value(&self, user: usize, server: usize) -> Result<f64> {
        let d = self.lookup(&self.delay_s, user, server)?;
        let e = self.lookup(&self.energy_j, user, server)?;
        Ok(self.rho1 * d + self.rho2 * e)
    }

    /// The server's ranking key for an applicant: its estimated delay.
    pub fn server_selection_value(&self, user: usize, server: usize) -> Result<f64> {
        self.lookup(&self.delay_s, user, server)
    }

    fn lookup(&self, table: &[Vec<f64>], user: usize, server: usize) -> Result<f64> {
        table
            .get(user)
            .and_then(|row| row.get(server))
            .copied()
            .ok_or_else(|| Error::Structure(format!("no estimate for user {user}, server {server}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MatchEvent {
    Apply { round: usize, user: usize, server: usize },
    Accept { round: usize, user: usize, server: usize },
    Reject { round: usize, user: usize, server: usize },
    /// No server had room; the user computes locally this slot.
    Unmatched { round: usize, user: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `assignment[user]`; `None` marks a local-only user.
    pub assignment: Vec<Option<usize>>,
    /// Connected users per server, ascending id.
    pub rosters: Vec<Vec<usize>>,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log: Vec<MatchEvent>,
}

impl Matching {
    pub fn from_assignment(assignment: Vec<Option<usize>>, num_servers: usize) -> Self {
        let mut rosters = vec![Vec::new(); num_servers];
        for (n, a) in assignment.iter().enumerate() {
            if let Some(m) = a {
                rosters[*m].push(n);
            }
        }
        Matching { assignment, rosters, rounds: 0, log: Vec::new() }
    }

    /// Checks the partition and capacity invariants.
    pub fn check(&self, capacity: usize) -> Result<()> {
        let mut seen = vec![false; self.assignment.len()];
        for (m, roster) in self.rosters.iter().enumerate() {
            if roster.len() > capacity {
                return Err(Error::Constraint(format!("server {m} roster {} > {capacity}", roster.len())));
            }
            for &n in roster {
                if seen.get(n).copied().unwrap_or(true) {
                    return Err(Error::Constraint(format!("user {n} listed twice or unknown")));
                }
                seen[n] = true;
                if self.assignment[n] != Some(m) {
                    return Err(Error::Constraint(format!("user {n} roster/assignment mismatch")));
                }
            }
        }
        for (n, a) in self.assignment.iter().enumerate() {
            if a.is_some() && !seen[n] {
                return Err(Error::Constraint(format!("user {n} assigned but missing from roster")));
            }
        }
        Ok(())
    }
}

/// Runs the co-selection rounds. With `fallback` enabled, users left over
/// once every server is full become local-only; otherwise an instance whose
/// total capacity is below the user count is rejected.
pub fn co_select(instance: &SelectionInstance, fallback: bool) -> Result<Matching> {
    co_select_inner(instance, fallback, false, &mut |n, rosters| best_open_server(instance, n, rosters))
}

/// Same as [`co_select`] but records every application and decision.
pub fn co_select_logged(instance: &SelectionInstance, fallback: bool) -> Result<Matching> {
    co_select_inner(instance, fallback, true, &mut |n, rosters| best_open_server(instance, n, rosters))
}

/// Variant where each unmatched user applies to a uniformly random server
/// that still has room instead of its cheapest one. Servers accept as in
/// [`co_select`].
pub fn co_select_random<R: Rng + ?Sized>(instance: &SelectionInstance, fallback: bool, rng: &mut R) -> Result<Matching> {
    let capacity = instance.capacity;
    co_select_inner(instance, fallback, false, &mut |_, rosters| {
        let open: Vec<usize> = (0..rosters.len()).filter(|&m| rosters[m].len() < capacity).collect();
        Ok(if open.is_empty() { None } else { Some(open[rng.random_range(0..open.len())]) })
    })
}

fn best_open_server(instance: &SelectionInstance, n: usize, rosters: &[Vec<usize>]) -> Result<Option<usize>> {
    let mut best: Option<(f64, usize)> = None;
    for (m, roster) in rosters.iter().enumerate() {
        if roster.len() >= instance.capacity {
            continue;
        }
        let v = instance.user_selection_value(n, m)?;
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, m));
        }
    }
    Ok(best.map(|(_, m)| m))
}

type Chooser<'a> = dyn FnMut(usize, &[Vec<usize>]) -> Result<Option<usize>> + 'a;

fn co_select_inner(instance: &SelectionInstance, fallback: bool, logged: bool, choose: &mut Chooser<'_>) -> Result<Matching> {
    instance.validate()?;
    let n_users = instance.num_users();
    let n_servers = instance.num_servers();
    let capacity = instance.capacity;
    if !fallback && n_servers * capacity < n_users {
        return Err(Error::Infeasible { users: n_users, capacity: n_servers * capacity });
    }

    let mut assignment: Vec<Option<usize>> = vec![None; n_users];
    let mut rosters: Vec<Vec<usize>> = vec![Vec::new(); n_servers];
    let mut rejected: Vec<usize> = (0..n_users).collect();
    let mut log = Vec::new();
    let mut round = 0;

    while !rejected.is_empty() {
        round += 1;
        let mut applications: Vec<Vec<usize>> = vec![Vec::new(); n_servers];
        let mut still_rejected = Vec::new();
        for &n in &rejected {
            match choose(n, &rosters)? {
                Some(m) => {
                    applications[m].push(n);
                    if logged {
                        log.push(MatchEvent::Apply { round, user: n, server: m });
                    }
                }
                None if fallback => {
                    if logged {
                        log.push(MatchEvent::Unmatched { round, user: n });
                    }
                }
                None => return Err(Error::Infeasible { users: n_users, capacity: n_servers * capacity }),
            }
        }

        for (m, applicants) in applications.iter_mut().enumerate() {
            let mut keyed = Vec::with_capacity(applicants.len());
            for &n in applicants.iter() {
                keyed.push((instance.server_selection_value(n, m)?, n));
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (_, n) in keyed {
                if rosters[m].len() < capacity {
                    rosters[m].push(n);
                    assignment[n] = Some(m);
                    if logged {
                        log.push(MatchEvent::Accept { round, user: n, server: m });
                    }
                } else {
                    still_rejected.push(n);
                    if logged {
                        log.push(MatchEvent::Reject { round, user: n, server: m });
                    }
                }
            }
            applicants.clear();
        }
        still_rejected.sort_unstable();
        rejected = still_rejected;
    }

    for roster in &mut rosters {
        roster.sort_unstable();
    }
    Ok(Matching { assignment, rosters, rounds: round, log })
}
