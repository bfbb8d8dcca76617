//! Agent states, action mapping and server-side refinement.
//!
//! A user's actor proposes an offload flag plus local frequency and transmit
//! power. Users asking to offload are passed to their server, which approves
//! as many as its subchannels and storage allow, ranked by score. Users that
//! are denied fall back to local computing.

use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, Interval};
use crate::error::{Error, Result};
use crate::simcore::{DeviceState, TaskSpec};

/// Width of a user action.
pub const ACTION_DIM: usize = 3;

/// Offload requests at or above this raw value go to the server.
pub const OFFLOAD_THRESHOLD: f64 = 0.5;

/// Observation width for `num_servers` servers.
pub fn state_dim(num_servers: usize) -> usize {
    6 + num_servers
}

/// Min-max normalized observation:
/// `[size, cycles, deadline, freq, power, battery, gain_0 .. gain_{M-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState(pub Vec<f64>);

impl AgentState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Raw actor output, every component in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserAction {
    pub offload: f64,
    pub freq: f64,
    pub power: f64,
}

impl UserAction {
    pub fn from_slice(v: &[f64]) -> Self {
        UserAction { offload: v[0], freq: v[1], power: v[2] }
    }

    pub fn to_array(self) -> [f64; ACTION_DIM] {
        [self.offload, self.freq, self.power]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// A user action translated into physical quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappedAction {
    pub offload_request: bool,
    pub local_freq_hz: f64,
    pub tx_power_dbm: f64,
}

/// Per-server approvals, ascending user id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ServerAction {
    pub approvals: Vec<(usize, bool)>,
}

impl ServerAction {
    pub fn approved(&self, user: usize) -> bool {
        self.approvals.iter().any(|&(u, a)| u == user && a)
    }

    pub fn approved_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.approvals.iter().filter(|(_, a)| *a).map(|(u, _)| *u)
    }
}

fn normalize(v: f64, range: Interval, name: &str) -> Result<f64> {
    if !range.contains(v) {
        return Err(Error::Domain(format!("{name} = {v} outside [{}, {}]", range.lo(), range.hi())));
    }
    if range.width() == 0.0 {
        Ok(0.0)
    } else {
        Ok((v - range.lo()) / range.width())
    }
}

fn denormalize(v: f64, range: Interval) -> f64 {
    range.lo() + v * range.width()
}

pub fn encode_state(device: &DeviceState, task: &TaskSpec, cfg: &EnvConfig) -> Result<AgentState> {
    if device.gains_db.len() != cfg.num_servers {
        return Err(Error::Shape { expected: cfg.num_servers, got: device.gains_db.len() });
    }
    let mut s = Vec::with_capacity(state_dim(cfg.num_servers));
    s.push(normalize(task.size_bits, cfg.task_size_bits(), "task size")?);
    s.push(normalize(task.cycles_per_bit, cfg.cycles_per_bit, "cycles per bit")?);
    s.push(normalize(task.deadline_s, cfg.deadline_s, "deadline")?);
    s.push(normalize(device.local_freq_hz, cfg.local_freq_hz(), "local frequency")?);
    s.push(normalize(device.tx_power_dbm, cfg.tx_power_dbm, "transmit power")?);
    s.push(normalize(device.battery_j, Interval(0.0, cfg.b_max_j()), "battery")?);
    for &g in &device.gains_db {
        s.push(normalize(g, cfg.channel_gain_db, "channel gain")?);
    }
    Ok(AgentState(s))
}

/// Inverse of [`encode_state`]; `kappa` is taken from the config.
pub fn decode_state(state: &AgentState, cfg: &EnvConfig) -> Result<(DeviceState, TaskSpec)> {
    let s = &state.0;
    if s.len() != state_dim(cfg.num_servers) {
        return Err(Error::Shape { expected: state_dim(cfg.num_servers), got: s.len() });
    }
    let task = TaskSpec {
        size_bits: denormalize(s[0], cfg.task_size_bits()),
        cycles_per_bit: denormalize(s[1], cfg.cycles_per_bit),
        deadline_s: denormalize(s[2], cfg.deadline_s),
    };
    let device = DeviceState {
        local_freq_hz: denormalize(s[3], cfg.local_freq_hz()),
        tx_power_dbm: denormalize(s[4], cfg.tx_power_dbm),
        battery_j: s[5] * cfg.b_max_j(),
        gains_db: s[6..].iter().map(|&g| denormalize(g, cfg.channel_gain_db)).collect(),
        kappa: cfg.kappa,
    };
    Ok((device, task))
}

/// Offload flag by threshold; frequency and power scale their budget maxima
/// and are floored at the budget minima. Power is scaled in dBm.
pub fn map_user_action(a: &UserAction, cfg: &EnvConfig) -> MappedAction {
    let f = cfg.local_freq_hz();
    let p = cfg.tx_power_dbm;
    let freq = a.freq.clamp(0.0, 1.0);
    let power = a.power.clamp(0.0, 1.0);
    MappedAction {
        offload_request: a.offload >= OFFLOAD_THRESHOLD,
        local_freq_hz: f.lo().max(freq * f.hi()),
        tx_power_dbm: p.lo().max(power * p.hi()),
    }
}

/// A user on the server's roster asking to offload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub user: usize,
    pub size_bits: f64,
    /// Higher is approved first.
    pub score: f64,
}

/// Resources a server can hand out in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerBudget {
    pub subchannels: usize,
    pub storage_bits: f64,
}

/// Approves everyone when neither the subchannel nor the storage limit binds;
/// otherwise walks candidates by descending score (ties by ascending id) and
/// approves each one that still fits, skipping those that do not.
pub fn refine(roster: &[usize], budget: ServerBudget, candidates: &[Candidate]) -> Result<ServerAction> {
    for c in candidates {
        if !roster.contains(&c.user) {
            return Err(Error::Structure(format!("candidate {} is not on the roster", c.user)));
        }
    }
    let total: f64 = candidates.iter().map(|c| c.size_bits).sum();
    let mut approvals: Vec<(usize, bool)> = if candidates.len() <= budget.subchannels && total <= budget.storage_bits {
        candidates.iter().map(|c| (c.user, true)).collect()
    } else {
        let mut ranked: Vec<&Candidate> = candidates.iter().collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.user.cmp(&b.user)));
        let mut used_channels = 0;
        let mut used_bits = 0.0;
        ranked
            .into_iter()
            .map(|c| {
                let fits = used_channels < budget.subchannels && used_bits + c.size_bits <= budget.storage_bits;
                if fits {
                    used_channels += 1;
                    used_bits += c.size_bits;
                }
                (c.user, fits)
            })
            .collect()
    };
    approvals.sort_by_key(|&(u, _)| u);
    Ok(ServerAction { approvals })
}

/// A user offloads only if it asked to and its server approved.
pub fn final_decision(pre_decision: bool, approved: bool) -> bool {
    pre_decision && approved
}

/// Fixed-width concatenation of `(state, action)` pairs for a server's
/// roster in ascending user id, zero-padded to `capacity` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalView(pub Vec<f64>);

pub fn view_len(capacity: usize, state_dim: usize) -> usize {
    capacity * (state_dim + ACTION_DIM)
}

/// Writes a view into `out`, which must be `view_len` long and is fully
/// overwritten. `members` need not be sorted.
pub fn write_view(out: &mut [f64], capacity: usize, state_dim: usize, members: &[(usize, &[f64], [f64; ACTION_DIM])]) -> Result<()> {
    if members.len() > capacity {
        return Err(Error::Structure(format!("roster of {} exceeds capacity {capacity}", members.len())));
    }
    let width = state_dim + ACTION_DIM;
    if out.len() != capacity * width {
        return Err(Error::Shape { expected: capacity * width, got: out.len() });
    }
    out.fill(0.0);
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by_key(|&i| members[i].0);
    for (slot, &i) in order.iter().enumerate() {
        let (_, state, action) = &members[i];
        if state.len() != state_dim {
            return Err(Error::Shape { expected: state_dim, got: state.len() });
        }
        let dst = &mut out[slot * width..(slot + 1) * width];
        dst[..state_dim].copy_from_slice(state);
        dst[state_dim..].copy_from_slice(action);
    }
    Ok(())
}

pub fn build_global_view(capacity: usize, state_dim: usize, members: &[(usize, &AgentState, UserAction)]) -> Result<GlobalView> {
    let flat: Vec<(usize, &[f64], [f64; ACTION_DIM])> =
        members.iter().map(|(u, s, a)| (*u, s.as_slice(), a.to_array())).collect();
    let mut out = vec![0.0; view_len(capacity, state_dim)];
    write_view(&mut out, capacity, state_dim, &flat)?;
    Ok(GlobalView(out))
}
