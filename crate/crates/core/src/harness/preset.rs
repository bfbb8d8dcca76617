use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{env_overrides_with_prefix, merge_object, EnvConfig, Interval, ENV_PREFIX};
use crate::error::{Error, Result};
use crate::trainer::{Policy, TrainConfig};

/// Prefix for training overrides, e.g. `EDGE_OFFLOAD_TRAIN_EPISODES=50`.
pub const TRAIN_ENV_PREFIX: &str = "EDGE_OFFLOAD_TRAIN_";

pub const PRESET_NAMES: [&str; 3] = ["paper", "smoke", "stress"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPreset {
    pub name: String,
    pub env: EnvConfig,
    pub train: TrainConfig,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentPreset {
    /// Full-size setting with ten seeds.
    pub fn paper() -> Self {
        ExperimentPreset {
            name: "paper".into(),
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            policies: Policy::ALL.to_vec(),
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("runs/paper"),
        }
    }

    /// Desk-scale setting: six users, two small servers, 300 episodes.
    pub fn smoke() -> Self {
        ExperimentPreset {
            name: "smoke".into(),
            env: EnvConfig {
                num_users: 6,
                num_servers: 2,
                max_users_per_server: 4,
                cpus_per_server: 2,
                subchannels: 4,
                server_storage_mb: 100.0,
                ..EnvConfig::default()
            },
            train: TrainConfig { episodes: 300, ..TrainConfig::default() },
            out_dir: PathBuf::from("runs/smoke"),
            ..Self::paper()
        }
    }

    /// Energy-tight variant: 100 slots, batteries between 0.5 J and 1 J,
    /// energy weighted five times delay.
    pub fn stress() -> Self {
        let paper = Self::paper();
        ExperimentPreset {
            name: "stress".into(),
            env: EnvConfig {
                rho1: 1.0,
                rho2: 5.0,
                battery_mj: Interval(0.5e-6, 1.0e-6),
                slots: 100,
                ..paper.env
            },
            out_dir: PathBuf::from("runs/stress"),
            ..paper
        }
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "smoke" => Ok(Self::smoke()),
            "stress" => Ok(Self::stress()),
            _ => Err(Error::Config(format!("unknown preset `{name}`; expected one of {PRESET_NAMES:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Config("preset name is empty".into()));
        }
        let unique: HashSet<u64> = self.seeds.iter().copied().collect();
        if unique.len() != self.seeds.len() {
            return Err(Error::Config("preset seeds are not unique".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("preset has no policies".into()));
        }
        self.env.validate()?;
        self.train.validate()
    }

    /// Overlays a partial JSON object with any of the preset's keys, e.g.
    /// `{"env": {"num_users": 12}, "train": {"episodes": 50}}`.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge_object(&mut base, overrides)?;
        let preset: ExperimentPreset = serde_json::from_value(base)?;
        preset.validate()?;
        Ok(preset)
    }

    /// Reads a JSON config file. A top-level `"preset"` key picks the base
    /// preset (default `fallback`); every other key overrides it.
    pub fn from_file(path: &Path, fallback: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: Value = serde_json::from_str(&text)?;
        let base = match value.as_object_mut().and_then(|o| o.remove("preset")) {
            Some(Value::String(name)) => Self::named(&name)?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
            None => Self::named(fallback)?,
        };
        base.with_overrides(&value)
    }

    /// Applies `EDGE_OFFLOAD_<KEY>` to environment keys and
    /// `EDGE_OFFLOAD_TRAIN_<KEY>` to training keys.
    pub fn with_env_overrides<I>(&self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let vars: Vec<(String, String)> = vars.into_iter().collect();
        let env_vars = vars.iter().filter(|(k, _)| !k.starts_with(TRAIN_ENV_PREFIX)).cloned();
        let env = env_overrides_with_prefix(&serde_json::to_value(&self.env)?, ENV_PREFIX, env_vars)?;
        let train = env_overrides_with_prefix(&serde_json::to_value(&self.train)?, TRAIN_ENV_PREFIX, vars.iter().cloned())?;
        self.with_overrides(&serde_json::json!({ "env": env, "train": train }))
    }

    /// Seeds `0..count`.
    pub fn with_seed_count(mut self, count: usize) -> Self {
        self.seeds = (0..count as u64).collect();
        self
    }

    /// Resolved configuration of one run.
    pub fn run_spec(&self, policy: Policy, seed: u64) -> RunSpec {
        RunSpec::new(&self.env, &self.train, policy, seed)
    }
}

/// Fully resolved inputs of a single training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub policy: Policy,
    pub seed: u64,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl RunSpec {
    /// The environment stream is seeded with `seed`; the agent stream with
    /// a value derived from it, so the two never coincide.
    pub fn new(env: &EnvConfig, train: &TrainConfig, policy: Policy, seed: u64) -> Self {
        RunSpec {
            policy,
            seed,
            env: EnvConfig { seed, ..env.clone() },
            train: TrainConfig { seed: agent_seed(seed), ..train.clone() },
        }
    }

    /// File stem shared by this run's outputs.
    pub fn stem(&self) -> String {
        format!("{}_seed{}", self.policy.name().to_ascii_lowercase(), self.seed)
    }
}

pub fn agent_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}
