//! Environment physics and the slot state machine.

mod env;
pub mod physics;
pub mod queue;

use serde::{Deserialize, Serialize};

pub use env::{Env, Observation, StepResult};
pub use physics::{
    battery_step, cost, estimate_offload, generate_task, local_delay, local_energy, offload_energy,
    penalty, reward, slot_totals, uplink_rate, OffloadEstimate,
};
pub use queue::{schedule_server, OffloadJob, ScheduledJob};

/// One slot's task for one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub size_bits: f64,
    pub cycles_per_bit: f64,
    pub deadline_s: f64,
}

impl TaskSpec {
    /// Total CPU cycles needed.
    pub fn cycles(&self) -> f64 {
        self.size_bits * self.cycles_per_bit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub local_freq_hz: f64,
    pub tx_power_dbm: f64,
    pub battery_j: f64,
    /// Normalized channel gain to each server, in dB.
    pub gains_db: Vec<f64>,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub cpu_free_times_s: Vec<f64>,
    pub storage_budget_bits: f64,
    pub subchannels: usize,
    pub cpu_freq_hz: f64,
    /// Connected users, ascending id.
    pub roster: Vec<usize>,
}

impl ServerState {
    pub fn new(cpus: usize, storage_bits: f64, subchannels: usize, cpu_freq_hz: f64) -> Self {
        ServerState {
            cpu_free_times_s: vec![0.0; cpus],
            storage_budget_bits: storage_bits,
            subchannels,
            cpu_freq_hz,
            roster: Vec::new(),
        }
    }
}

/// Final per-user decision for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub user: usize,
    pub offload: bool,
    /// Associated server. `None` means the user could not be matched and
    /// must compute locally.
    pub server: Option<usize>,
    pub local_freq_hz: f64,
    pub tx_power_dbm: f64,
}

impl SlotDecision {
    pub fn local(user: usize, server: Option<usize>, local_freq_hz: f64, tx_power_dbm: f64) -> Self {
        SlotDecision { user, offload: false, server, local_freq_hz, tx_power_dbm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotOutcome {
    pub user: usize,
    pub offloaded: bool,
    pub delay_s: f64,
    pub energy_j: f64,
    pub cost: f64,
    pub penalty: f64,
    pub timed_out: bool,
    pub reward: f64,
    /// Battery after this slot's consumption and harvest.
    pub battery_j: f64,
    pub below_b_min: bool,
}
