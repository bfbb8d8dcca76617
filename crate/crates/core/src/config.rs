//! Environment configuration.
//!
//! Values are stored in the units they are usually quoted in (MB, GHz, dBm,
//! dB, MJ) and converted to canonical units (bits, Hz, W, J) through the
//! accessor methods. JSON keys carry the unit as a suffix.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Prefix for environment variable overrides, e.g. `EDGE_OFFLOAD_RHO1=1`.
pub const ENV_PREFIX: &str = "EDGE_OFFLOAD_";

pub const BITS_PER_MB: f64 = 8.0e6;
pub const HZ_PER_GHZ: f64 = 1.0e9;
pub const HZ_PER_MHZ: f64 = 1.0e6;
pub const J_PER_MJ: f64 = 1.0e6;

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn lo(&self) -> f64 {
        self.0
    }

    pub fn hi(&self) -> f64 {
        self.1
    }

    pub fn width(&self) -> f64 {
        self.1 - self.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }

    pub fn scaled(&self, k: f64) -> Interval {
        Interval(self.0 * k, self.1 * k)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !self.0.is_finite() || !self.1.is_finite() || self.0 > self.1 {
            return Err(Error::Config(format!(
                "{name}: [{}, {}] is not a valid interval",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    /// Number of edge servers (M).
    pub num_servers: usize,
    /// Number of user devices (N).
    pub num_users: usize,
    /// Per-task deadline range in seconds; the upper end is the slot's
    /// maximum tolerated delay.
    pub deadline_s: Interval,
    pub task_size_mb: Interval,
    pub cycles_per_bit: Interval,
    /// Local CPU frequency budget `[f_min, f_max]`.
    pub local_freq_ghz: Interval,
    /// Transmit power budget `[p_min, p_max]`.
    pub tx_power_dbm: Interval,
    /// Battery thresholds `[b_min, b_max]`.
    pub battery_mj: Interval,
    /// Maximum connected users per server (z_max).
    pub max_users_per_server: usize,
    /// CPUs per server (U_m).
    pub cpus_per_server: usize,
    /// Storage capacity per server (D_m).
    pub server_storage_mb: f64,
    /// Per-CPU server frequency.
    pub server_freq_ghz: f64,
    /// Normalized uplink channel gain range.
    pub channel_gain_db: Interval,
    /// Effective switched capacitance of the device chip.
    pub kappa: f64,
    pub bandwidth_mhz: f64,
    /// Number of equal subchannels (K).
    pub subchannels: usize,
    /// Energy harvested at the start of every slot.
    pub harvested_energy_j: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// Slots per episode (T).
    pub slots: usize,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            num_servers: 3,
            num_users: 48,
            deadline_s: Interval(0.1, 1.0),
            task_size_mb: Interval(1.0, 50.0),
            cycles_per_bit: Interval(300.0, 700.0),
            local_freq_ghz: Interval(0.4, 1.5),
            tx_power_dbm: Interval(1.0, 24.0),
            battery_mj: Interval(0.5, 3.2),
            max_users_per_server: 16,
            cpus_per_server: 8,
            server_storage_mb: 400.0,
            server_freq_ghz: 4.0,
            channel_gain_db: Interval(5.0, 14.0),
            kappa: 5e-27,
            bandwidth_mhz: 40.0,
            subchannels: 10,
            harvested_energy_j: 1e-3,
            rho1: 0.5,
            rho2: 0.5,
            slots: 10,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_servers", self.num_servers),
            ("num_users", self.num_users),
            ("max_users_per_server", self.max_users_per_server),
            ("cpus_per_server", self.cpus_per_server),
            ("subchannels", self.subchannels),
            ("slots", self.slots),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        self.deadline_s.validate("deadline_s")?;
        self.task_size_mb.validate("task_size_mb")?;
        self.cycles_per_bit.validate("cycles_per_bit")?;
        self.local_freq_ghz.validate("local_freq_ghz")?;
        self.tx_power_dbm.validate("tx_power_dbm")?;
        self.battery_mj.validate("battery_mj")?;
        self.channel_gain_db.validate("channel_gain_db")?;
        if self.deadline_s.lo() <= 0.0 {
            return Err(Error::Config("deadline_s must be positive".into()));
        }
        if self.task_size_mb.lo() < 0.0 || self.cycles_per_bit.lo() < 0.0 {
            return Err(Error::Config("task ranges must be non-negative".into()));
        }
        if self.local_freq_ghz.lo() <= 0.0 {
            return Err(Error::Config("local_freq_ghz must be positive".into()));
        }
        if self.battery_mj.lo() < 0.0 {
            return Err(Error::Config("battery_mj must be non-negative".into()));
        }
        let non_negative = [
            ("server_storage_mb", self.server_storage_mb),
            ("kappa", self.kappa),
            ("harvested_energy_j", self.harvested_energy_j),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, v) in [
            ("server_freq_ghz", self.server_freq_ghz),
            ("bandwidth_mhz", self.bandwidth_mhz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0")));
            }
        }
        Ok(())
    }

    /// Parses a JSON document. Missing keys take their default values.
    pub fn from_json(text: &str) -> Result<Self> {
        let overrides: Value = serde_json::from_str(text)?;
        Self::default().with_overrides(&overrides)
    }

    /// Applies a (possibly partial) JSON object of overrides.
    pub fn with_overrides(&self, overrides: &Value) -> Result<Self> {
        let mut base = serde_json::to_value(self)?;
        merge_object(&mut base, overrides)?;
        let cfg: EnvConfig = serde_json::from_value(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `EDGE_OFFLOAD_<KEY>` variables from the given iterator. Values
    /// are parsed as JSON, so ranges are written as `[lo,hi]`.
    pub fn with_env_overrides<I>(&self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let overrides = env_overrides(&serde_json::to_value(self)?, vars)?;
        self.with_overrides(&overrides)
    }

    pub fn task_size_bits(&self) -> Interval {
        self.task_size_mb.scaled(BITS_PER_MB)
    }

    pub fn local_freq_hz(&self) -> Interval {
        self.local_freq_ghz.scaled(HZ_PER_GHZ)
    }

    pub fn battery_j(&self) -> Interval {
        self.battery_mj.scaled(J_PER_MJ)
    }

    pub fn b_min_j(&self) -> f64 {
        self.battery_j().lo()
    }

    pub fn b_max_j(&self) -> f64 {
        self.battery_j().hi()
    }

    pub fn storage_bits(&self) -> f64 {
        self.server_storage_mb * BITS_PER_MB
    }

    pub fn server_freq_hz(&self) -> f64 {
        self.server_freq_ghz * HZ_PER_GHZ
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_mhz * HZ_PER_MHZ
    }

    /// Upper end of the deadline range.
    pub fn max_deadline_s(&self) -> f64 {
        self.deadline_s.hi()
    }
}

/// Recursively overlays `overrides` onto `base`. Unknown keys are rejected.
pub(crate) fn merge_object(base: &mut Value, overrides: &Value) -> Result<()> {
    let Some(over) = overrides.as_object() else {
        return Err(Error::Config("overrides must be a JSON object".into()));
    };
    let Some(target) = base.as_object_mut() else {
        return Err(Error::Config("base is not a JSON object".into()));
    };
    for (k, v) in over {
        match target.get_mut(k) {
            Some(slot) if slot.is_object() && v.is_object() => merge_object(slot, v)?,
            Some(slot) => *slot = v.clone(),
            None => return Err(Error::Config(format!("unknown key `{k}`"))),
        }
    }
    Ok(())
}

/// Collects `EDGE_OFFLOAD_<KEY>` overrides for the top-level keys of `base`.
pub(crate) fn env_overrides<I>(base: &Value, vars: I) -> Result<Value>
where
    I: IntoIterator<Item = (String, String)>,
{
    env_overrides_with_prefix(base, ENV_PREFIX, vars)
}

/// Collects `<prefix><KEY>` overrides for the top-level keys of `base`.
pub(crate) fn env_overrides_with_prefix<I>(base: &Value, prefix: &str, vars: I) -> Result<Value>
where
    I: IntoIterator<Item = (String, String)>,
{
    let keys: Vec<String> = base
        .as_object()
        .map(|o| o.keys().cloned().collect())
        .unwrap_or_default();
    let mut out = serde_json::Map::new();
    for (name, raw) in vars {
        let Some(suffix) = name.strip_prefix(prefix) else {
            continue;
        };
        let Some(key) = keys.iter().find(|k| k.to_uppercase() == suffix) else {
            continue;
        };
        let value = serde_json::from_str(&raw)
            .unwrap_or_else(|_| Value::String(raw.clone()));
        out.insert(key.clone(), value);
    }
    Ok(Value::Object(out))
}
