//! Multi-agent actor-critic training.
//!
//! Every user owns an actor that sees only its own observation, plus a user
//! critic. One server critic is shared by all servers. Critics score a
//! user from the view of its server's roster (every member's state and
//! action) followed by the user's own state and action when it offloaded,
//! zeros otherwise. Server approvals are not learned directly: servers rank
//! offload requests by server-critic value.

mod agents;
mod layout;
mod policy;
mod runner;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hybrid::ACTION_DIM;

pub use agents::{AgentBundle, RoundStats};
pub use layout::CriticLayout;
pub use policy::{baseline_behavior, Policy, RefinementRule, SelectionRule};
pub use runner::{EpisodeMetrics, EpisodeReport, SlotTrace, Trainer, TrainingLog, CSV_COLUMNS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub start: f64,
    /// Multiplicative decay applied after every episode.
    pub decay: f64,
    pub floor: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule { start: 0.2, decay: 0.999, floor: 0.01 }
    }
}

impl NoiseSchedule {
    /// Noise scale in effect during `episode` (0-based).
    pub fn at(&self, episode: usize) -> f64 {
        (self.start * self.decay.powi(episode as i32)).max(self.floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Training episodes.
    pub episodes: usize,
    /// Update rounds after every episode.
    pub train_rounds: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Target network blend rate.
    pub omega: f64,
    pub noise: NoiseSchedule,
    /// Hidden layer widths shared by actors and critics.
    pub hidden: Vec<usize>,
    /// Reward weight in the replay priority; the TD weight is `1 - nu_r`.
    pub nu_r: f64,
    pub priority_eps: f64,
    /// Replace the priority loss weights with normalized inverse-probability
    /// weights.
    pub importance_weighting: bool,
    /// Multiplier applied to rewards inside critic targets. Raw rewards run
    /// to the hundreds; scaling keeps critic outputs near unit size.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            train_rounds: 5,
            gamma: 0.99,
            batch_size: 64,
            buffer_capacity: 100_000,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            omega: 0.01,
            noise: NoiseSchedule::default(),
            hidden: vec![64, 512],
            nu_r: 0.5,
            priority_eps: 1e-6,
            importance_weighting: false,
            reward_scale: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.train_rounds == 0 {
            return Err(Error::Config("train_rounds must be at least 1".into()));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config("batch size must be positive and fit in the buffer".into()));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Config(format!("omega {} outside (0, 1]", self.omega)));
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be non-empty and positive".into()));
        }
        if !(self.reward_scale > 0.0) {
            return Err(Error::Config("reward_scale must be positive".into()));
        }
        let n = self.noise;
        if !(n.start >= 0.0 && n.floor >= 0.0 && n.decay > 0.0 && n.decay <= 1.0) {
            return Err(Error::Config("invalid noise schedule".into()));
        }
        Ok(())
    }
}

/// One slot's transition for all users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Normalized observations, one row per user.
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    /// Server each user was associated with; `None` for local-only users.
    pub assignment: Vec<Option<usize>>,
    /// Final offload decisions after server approval.
    pub offloaded: Vec<bool>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<Vec<f64>>,
    /// Last slot of the episode.
    pub terminal: bool,
}

impl Experience {
    pub fn num_users(&self) -> usize {
        self.states.len()
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len().max(1) as f64
    }

    /// Users associated with server `m`, ascending id.
    pub fn roster(&self, m: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&n| self.assignment[n] == Some(m)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.states.len();
        let ok = self.actions.len() == n
            && self.assignment.len() == n
            && self.offloaded.len() == n
            && self.rewards.len() == n
            && self.next_states.len() == n;
        if !ok {
            return Err(Error::Structure("experience fields disagree on user count".into()));
        }
        for (i, &x) in self.offloaded.iter().enumerate() {
            if x && self.assignment[i].is_none() {
                return Err(Error::Structure(format!("user {i} offloaded without a server")));
            }
        }
        Ok(())
    }
}
