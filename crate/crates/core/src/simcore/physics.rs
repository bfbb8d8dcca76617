//! Per-task delay, energy, cost and battery formulas.
//!
//! All functions work in canonical units: bits, seconds, joules, hertz and
//! watts. Power budgets are carried in dBm and gains in dB; they are converted
//! only at the point of use.

use rand::Rng;

use crate::config::{EnvConfig, Interval, BITS_PER_MB};
use crate::error::{Error, Result};

use super::TaskSpec;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn mb_to_bits(mb: f64) -> f64 {
    mb * BITS_PER_MB
}

/// Uniform draw on a closed interval; a collapsed interval returns its point.
pub fn draw<R: Rng + ?Sized>(rng: &mut R, range: Interval) -> f64 {
    if range.width() <= 0.0 {
        range.lo()
    } else {
        rng.random_range(range.lo()..=range.hi())
    }
}

/// Draws one slot's task. Size, cycles-per-bit and deadline are independent
/// uniforms over the configured ranges; size is drawn in MB and stored in bits.
pub fn generate_task<R: Rng + ?Sized>(rng: &mut R, cfg: &EnvConfig) -> TaskSpec {
    let size_mb = draw(rng, cfg.task_size_mb);
    let cycles_per_bit = draw(rng, cfg.cycles_per_bit);
    let deadline_s = draw(rng, cfg.deadline_s);
    TaskSpec {
        size_bits: mb_to_bits(size_mb),
        cycles_per_bit,
        deadline_s,
    }
}

pub fn local_delay(task: &TaskSpec, freq_hz: f64) -> Result<f64> {
    if freq_hz <= 0.0 || !freq_hz.is_finite() {
        return Err(Error::Domain(format!("local frequency must be positive, got {freq_hz}")));
    }
    Ok(task.cycles() / freq_hz)
}

pub fn local_energy(task: &TaskSpec, freq_hz: f64, kappa: f64) -> f64 {
    kappa * task.cycles() * freq_hz * freq_hz
}

/// Shannon rate of one of `K` equal subchannels.
pub fn uplink_rate(tx_power_dbm: f64, gain_db: f64, cfg: &EnvConfig) -> f64 {
    let snr = dbm_to_watts(tx_power_dbm) * db_to_linear(gain_db);
    subchannel_rate(snr, cfg.bandwidth_hz(), cfg.subchannels)
}

pub fn subchannel_rate(snr: f64, bandwidth_hz: f64, subchannels: usize) -> f64 {
    bandwidth_hz / subchannels as f64 * (1.0 + snr).log2()
}

/// Processing time of a task on one server CPU.
pub fn server_processing(task: &TaskSpec, server_freq_hz: f64) -> f64 {
    task.cycles() / server_freq_hz
}

pub fn offload_energy(tx_power_dbm: f64, tx_delay_s: f64) -> f64 {
    dbm_to_watts(tx_power_dbm) * tx_delay_s
}

/// Picks the local or offload `(delay, energy)` pair.
pub fn slot_totals(offload: bool, local: (f64, f64), offloaded: (f64, f64)) -> (f64, f64) {
    if offload {
        offloaded
    } else {
        local
    }
}

pub fn cost(delay_s: f64, energy_j: f64, rho1: f64, rho2: f64) -> f64 {
    rho1 * delay_s + rho2 * energy_j
}

/// Deadline and battery-floor violations, always `<= 0`.
pub fn penalty(delay_s: f64, deadline_s: f64, battery_j: f64, b_min: f64, rho1: f64, rho2: f64) -> f64 {
    rho1 * (deadline_s - delay_s).min(0.0) + rho2 * (battery_j - b_min).min(0.0)
}

/// Per-user reward: the negated slot-mean cost plus the (non-positive)
/// penalty, so violations always lower the reward.
pub fn reward(mean_cost: f64, penalty: f64) -> f64 {
    -mean_cost + penalty
}

pub fn battery_step(battery_j: f64, consumed_j: f64, harvested_j: f64, b_max: f64) -> f64 {
    (battery_j - consumed_j + harvested_j).max(0.0).min(b_max)
}

/// Offload delay/energy estimate assuming an idle server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadEstimate {
    /// Upload time, i.e. arrival time at the server.
    pub arrival_s: f64,
    pub processing_s: f64,
    /// Arrival plus processing, no queueing.
    pub total_s: f64,
    pub energy_j: f64,
}

pub fn estimate_offload(task: &TaskSpec, tx_power_dbm: f64, gain_db: f64, cfg: &EnvConfig) -> OffloadEstimate {
    let rate = uplink_rate(tx_power_dbm, gain_db, cfg);
    let arrival_s = if task.size_bits == 0.0 { 0.0 } else { task.size_bits / rate };
    let processing_s = server_processing(task, cfg.server_freq_hz());
    OffloadEstimate {
        arrival_s,
        processing_s,
        total_s: arrival_s + processing_s,
        energy_j: offload_energy(tx_power_dbm, arrival_s),
    }
}
