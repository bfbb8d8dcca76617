use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coselect::{co_select, co_select_random, Matching, SelectionInstance};
use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::hybrid::MappedAction;
use crate::simcore::{estimate_offload, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "UCMS")]
    Ucms,
    #[serde(rename = "RD_UCMS")]
    RdUcms,
    #[serde(rename = "PLAIN_MADDPG")]
    PlainMaddpg,
    #[serde(rename = "OFFLOADCOST")]
    OffloadCost,
    #[serde(rename = "DEADLINE")]
    Deadline,
}

impl Policy {
    pub const ALL: [Policy; 5] =
        [Policy::Ucms, Policy::RdUcms, Policy::PlainMaddpg, Policy::OffloadCost, Policy::Deadline];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ucms => "UCMS",
            Policy::RdUcms => "RD_UCMS",
            Policy::PlainMaddpg => "PLAIN_MADDPG",
            Policy::OffloadCost => "OFFLOADCOST",
            Policy::Deadline => "DEADLINE",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_uppercase().replace('-', "_");
        match key.as_str() {
            "UCMS" => Ok(Policy::Ucms),
            "RD_UCMS" => Ok(Policy::RdUcms),
            "PLAIN_MADDPG" | "MADDPG" => Ok(Policy::PlainMaddpg),
            "OFFLOADCOST" | "OFFLOAD_COST" => Ok(Policy::OffloadCost),
            "DEADLINE" => Ok(Policy::Deadline),
            _ => Err(Error::Config(format!("unknown policy `{s}`"))),
        }
    }
}

/// How users are associated with servers each slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionRule {
    /// Deferred acceptance on estimated offload cost and delay.
    CoSelection,
    /// Same acceptance, but users apply to a random open server.
    Random,
    /// Each user in id order takes its strongest-channel server with room.
    MaxGain,
}

/// How a server orders offload requests when its budget binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefinementRule {
    /// Server-critic value, highest first.
    QScore,
    /// Earliest estimated arrival first.
    FirstCome,
    /// Lowest estimated weighted delay and energy first.
    MinOffloadCost,
    /// Smallest deadline slack first.
    Deadline,
}

impl RefinementRule {
    pub fn is_learned(self) -> bool {
        self == RefinementRule::QScore
    }
}

pub fn baseline_behavior(policy: Policy) -> (SelectionRule, RefinementRule) {
    match policy {
        Policy::Ucms => (SelectionRule::CoSelection, RefinementRule::QScore),
        Policy::RdUcms => (SelectionRule::Random, RefinementRule::QScore),
        Policy::PlainMaddpg => (SelectionRule::MaxGain, RefinementRule::FirstCome),
        Policy::OffloadCost => (SelectionRule::MaxGain, RefinementRule::MinOffloadCost),
        Policy::Deadline => (SelectionRule::MaxGain, RefinementRule::Deadline),
    }
}

/// Associates users with servers. Users that find every server full stay
/// local-only.
pub fn select<R: Rng + ?Sized>(rule: SelectionRule, cfg: &EnvConfig, obs: &[Observation], rng: &mut R) -> Result<Matching> {
    match rule {
        SelectionRule::CoSelection => co_select(&SelectionInstance::from_observations(cfg, obs), true),
        SelectionRule::Random => co_select_random(&SelectionInstance::from_observations(cfg, obs), true, rng),
        SelectionRule::MaxGain => {
            let mut counts = vec![0usize; cfg.num_servers];
            let assignment = obs
                .iter()
                .map(|o| {
                    let mut order: Vec<usize> = (0..cfg.num_servers).collect();
                    order.sort_by(|&a, &b| o.device.gains_db[b].total_cmp(&o.device.gains_db[a]).then(a.cmp(&b)));
                    let m = order.into_iter().find(|&m| counts[m] < cfg.max_users_per_server)?;
                    counts[m] += 1;
                    Some(m)
                })
                .collect();
            Ok(Matching::from_assignment(assignment, cfg.num_servers))
        }
    }
}

/// Heuristic score (higher is approved first) for a user asking to offload
/// to `server` with the given mapped transmit power.
pub fn heuristic_score(rule: RefinementRule, cfg: &EnvConfig, obs: &Observation, action: &MappedAction, server: usize) -> Result<f64> {
    let gain = *obs
        .device
        .gains_db
        .get(server)
        .ok_or_else(|| Error::Structure(format!("no channel gain for server {server}")))?;
    let est = estimate_offload(&obs.task, action.tx_power_dbm, gain, cfg);
    match rule {
        RefinementRule::QScore => Err(Error::Structure("Q scores come from the server critic".into())),
        RefinementRule::FirstCome => Ok(-est.arrival_s),
        RefinementRule::MinOffloadCost => Ok(-(cfg.rho1 * est.total_s + cfg.rho2 * est.energy_j)),
        RefinementRule::Deadline => Ok(-(obs.task.deadline_s - est.total_s)),
    }
}
