use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::EnvConfig;
use crate::error::{Error, Result};

use super::physics::{self, draw};
use super::queue::{schedule_server, OffloadJob};
use super::{DeviceState, ServerState, SlotDecision, SlotOutcome, TaskSpec};

/// What a device sees at the start of a slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub device: DeviceState,
    pub task: TaskSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// One outcome per user, ascending id.
    pub outcomes: Vec<SlotOutcome>,
    pub next: Vec<Observation>,
    /// True once the episode's last slot has been played.
    pub done: bool,
}

/// The simulated system. All randomness comes from one ChaCha stream seeded
/// from `EnvConfig::seed`.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    rng: ChaCha8Rng,
    devices: Vec<DeviceState>,
    servers: Vec<ServerState>,
    tasks: Vec<TaskSpec>,
    slot: usize,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut env = Env {
            rng,
            devices: Vec::new(),
            servers: Vec::new(),
            tasks: Vec::new(),
            slot: 0,
            cfg,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn devices(&self) -> &[DeviceState] {
        &self.devices
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    /// Slots played since the last reset.
    pub fn slot(&self) -> usize {
        self.slot
    }

    /// Starts a new episode: batteries full, allocations at their budget
    /// maxima, fresh tasks and channel gains. The RNG stream continues.
    pub fn reset(&mut self) -> Vec<Observation> {
        let cfg = &self.cfg;
        self.devices = (0..cfg.num_users)
            .map(|_| DeviceState {
                local_freq_hz: cfg.local_freq_hz().hi(),
                tx_power_dbm: cfg.tx_power_dbm.hi(),
                battery_j: cfg.b_max_j(),
                gains_db: vec![0.0; cfg.num_servers],
                kappa: cfg.kappa,
            })
            .collect();
        self.servers = (0..cfg.num_servers)
            .map(|_| {
                ServerState::new(
                    cfg.cpus_per_server,
                    cfg.storage_bits(),
                    cfg.subchannels,
                    cfg.server_freq_hz(),
                )
            })
            .collect();
        self.slot = 0;
        self.redraw();
        self.observations()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.devices
            .iter()
            .zip(&self.tasks)
            .map(|(d, t)| Observation { device: d.clone(), task: *t })
            .collect()
    }

    fn redraw(&mut self) {
        let cfg = &self.cfg;
        let rng = &mut self.rng;
        self.tasks = (0..cfg.num_users).map(|_| physics::generate_task(rng, cfg)).collect();
        for d in &mut self.devices {
            for g in &mut d.gains_db {
                *g = draw(rng, cfg.channel_gain_db);
            }
        }
    }

    fn validate(&self, decisions: &[SlotDecision]) -> Result<Vec<SlotDecision>> {
        let cfg = &self.cfg;
        if decisions.len() != cfg.num_users {
            return Err(Error::Structure(format!(
                "expected {} decisions, got {}",
                cfg.num_users,
                decisions.len()
            )));
        }
        let mut by_user: Vec<Option<SlotDecision>> = vec![None; cfg.num_users];
        for d in decisions {
            let slot = by_user
                .get_mut(d.user)
                .ok_or_else(|| Error::Structure(format!("unknown user {}", d.user)))?;
            if slot.replace(*d).is_some() {
                return Err(Error::Structure(format!("duplicate decision for user {}", d.user)));
            }
            if let Some(m) = d.server {
                if m >= cfg.num_servers {
                    return Err(Error::Structure(format!("unknown server {m}")));
                }
            } else if d.offload {
                return Err(Error::Structure(format!("user {} offloads without a server", d.user)));
            }
            if !cfg.local_freq_hz().contains(d.local_freq_hz) {
                return Err(Error::Constraint(format!(
                    "user {} local frequency {} outside budget",
                    d.user, d.local_freq_hz
                )));
            }
            if !cfg.tx_power_dbm.contains(d.tx_power_dbm) {
                return Err(Error::Constraint(format!(
                    "user {} transmit power {} outside budget",
                    d.user, d.tx_power_dbm
                )));
            }
        }
        let ordered: Vec<SlotDecision> = by_user.into_iter().map(|d| d.expect("all users present")).collect();

        for m in 0..cfg.num_servers {
            let roster = ordered.iter().filter(|d| d.server == Some(m)).count();
            if roster > cfg.max_users_per_server {
                return Err(Error::Constraint(format!(
                    "server {m} has {roster} users, capacity {}",
                    cfg.max_users_per_server
                )));
            }
            let offloads: Vec<usize> = ordered
                .iter()
                .filter(|d| d.offload && d.server == Some(m))
                .map(|d| d.user)
                .collect();
            if offloads.len() > cfg.subchannels {
                return Err(Error::Constraint(format!(
                    "server {m} has {} offloads on {} subchannels",
                    offloads.len(),
                    cfg.subchannels
                )));
            }
            let stored: f64 = offloads.iter().map(|&n| self.tasks[n].size_bits).sum();
            if stored > cfg.storage_bits() {
                return Err(Error::Constraint(format!(
                    "server {m} stores {stored} bits, capacity {}",
                    cfg.storage_bits()
                )));
            }
        }
        Ok(ordered)
    }

    /// Plays one slot: computes every user's delay, energy, cost, penalty and
    /// reward, updates batteries, then draws the next slot's tasks and gains.
    /// Server CPU queues start empty in every slot.
    pub fn advance_slot(&mut self, decisions: &[SlotDecision]) -> Result<StepResult> {
        let decisions = self.validate(decisions)?;
        let cfg = self.cfg.clone();
        let n_users = cfg.num_users;

        for (m, server) in self.servers.iter_mut().enumerate() {
            server.cpu_free_times_s = vec![0.0; cfg.cpus_per_server];
            server.roster = decisions.iter().filter(|d| d.server == Some(m)).map(|d| d.user).collect();
        }

        let mut pairs = vec![(0.0, 0.0); n_users];
        let mut upload_energy = vec![0.0; n_users];
        let mut jobs: Vec<Vec<OffloadJob>> = vec![Vec::new(); cfg.num_servers];
        for d in &decisions {
            let task = &self.tasks[d.user];
            if d.offload {
                let m = d.server.expect("validated");
                let est = physics::estimate_offload(task, d.tx_power_dbm, self.devices[d.user].gains_db[m], &cfg);
                upload_energy[d.user] = est.energy_j;
                jobs[m].push(OffloadJob { user: d.user, arrival_s: est.arrival_s, processing_s: est.processing_s });
            } else {
                let delay = physics::local_delay(task, d.local_freq_hz)?;
                let energy = physics::local_energy(task, d.local_freq_hz, self.devices[d.user].kappa);
                pairs[d.user] = (delay, energy);
            }
        }
        for (m, server_jobs) in jobs.iter().enumerate() {
            for job in schedule_server(server_jobs, &mut self.servers[m])? {
                pairs[job.user] = (job.finish_s, upload_energy[job.user]);
            }
        }

        let costs: Vec<f64> = pairs.iter().map(|&(t, e)| physics::cost(t, e, cfg.rho1, cfg.rho2)).collect();
        let mean_cost = costs.iter().sum::<f64>() / n_users as f64;

        let mut outcomes = Vec::with_capacity(n_users);
        for d in &decisions {
            let n = d.user;
            let (delay_s, energy_j) = pairs[n];
            let task = self.tasks[n];
            let device = &mut self.devices[n];
            device.battery_j = physics::battery_step(device.battery_j, energy_j, cfg.harvested_energy_j, cfg.b_max_j());
            device.local_freq_hz = d.local_freq_hz;
            device.tx_power_dbm = d.tx_power_dbm;
            let penalty = physics::penalty(delay_s, task.deadline_s, device.battery_j, cfg.b_min_j(), cfg.rho1, cfg.rho2);
            outcomes.push(SlotOutcome {
                user: n,
                offloaded: d.offload,
                delay_s,
                energy_j,
                cost: costs[n],
                penalty,
                timed_out: delay_s > task.deadline_s,
                reward: physics::reward(mean_cost, penalty),
                battery_j: device.battery_j,
                below_b_min: device.battery_j < cfg.b_min_j(),
            });
        }

        self.slot += 1;
        self.redraw();
        Ok(StepResult {
            outcomes,
            next: self.observations(),
            done: self.slot >= cfg.slots,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_cfg() -> EnvConfig {
        EnvConfig {
            num_users: 6,
            num_servers: 2,
            max_users_per_server: 4,
            cpus_per_server: 2,
            subchannels: 4,
            server_storage_mb: 100.0,
            seed: 3,
            ..EnvConfig::default()
        }
    }

    fn all_local(env: &Env) -> Vec<SlotDecision> {
        let cfg = env.config();
        (0..cfg.num_users)
            .map(|n| SlotDecision::local(n, Some(n % cfg.num_servers), 1.0e9, 10.0))
            .collect()
    }

    #[test]
    fn reset_starts_fully_charged() {
        let env = Env::new(small_cfg()).unwrap();
        for d in env.devices() {
            assert_eq!(d.battery_j, env.config().b_max_j());
            assert_eq!(d.gains_db.len(), 2);
        }
    }

    #[test]
    fn all_local_matches_local_formulas() {
        let mut env = Env::new(small_cfg()).unwrap();
        let tasks = env.tasks().to_vec();
        let step = env.advance_slot(&all_local(&env)).unwrap();
        for (o, t) in step.outcomes.iter().zip(&tasks) {
            assert!(!o.offloaded);
            assert_eq!(o.delay_s, physics::local_delay(t, 1.0e9).unwrap());
            assert_eq!(o.energy_j, physics::local_energy(t, 1.0e9, 5e-27));
        }
        assert!(env.servers().iter().all(|s| s.cpu_free_times_s.iter().all(|&f| f == 0.0)));
    }

    #[test]
    fn all_local_ignores_server_parameters() {
        let mut a = Env::new(small_cfg()).unwrap();
        let mut b = Env::new(EnvConfig {
            server_freq_ghz: 17.0,
            cpus_per_server: 1,
            bandwidth_mhz: 3.0,
            server_storage_mb: 1.0,
            ..small_cfg()
        })
        .unwrap();
        let sa = a.advance_slot(&all_local(&a)).unwrap();
        let sb = b.advance_slot(&all_local(&b)).unwrap();
        assert_eq!(sa.outcomes, sb.outcomes);
    }

    #[test]
    fn offloaded_task_uses_queue_delay() {
        let mut env = Env::new(small_cfg()).unwrap();
        let mut decisions = all_local(&env);
        decisions[0].offload = true;
        decisions[0].server = Some(1);
        let task = env.tasks()[0];
        let gain = env.devices()[0].gains_db[1];
        let step = env.advance_slot(&decisions).unwrap();
        let est = physics::estimate_offload(&task, 10.0, gain, &small_cfg());
        assert_eq!(step.outcomes[0].delay_s, est.arrival_s + est.processing_s);
        assert_eq!(step.outcomes[0].energy_j, est.energy_j);
        assert!(step.outcomes[0].offloaded);
    }

    #[test]
    fn unknown_server_rejected() {
        let mut env = Env::new(small_cfg()).unwrap();
        let mut decisions = all_local(&env);
        decisions[2].server = Some(9);
        assert!(matches!(env.advance_slot(&decisions), Err(Error::Structure(_))));
    }

    #[test]
    fn unknown_user_rejected() {
        let mut env = Env::new(small_cfg()).unwrap();
        let mut decisions = all_local(&env);
        decisions[5].user = 17;
        assert!(matches!(env.advance_slot(&decisions), Err(Error::Structure(_))));
    }

    #[test]
    fn subchannel_overflow_rejected() {
        let mut env = Env::new(EnvConfig { subchannels: 1, ..small_cfg() }).unwrap();
        let mut decisions = all_local(&env);
        for d in decisions.iter_mut().take(3) {
            d.server = Some(0);
            d.offload = true;
        }
        assert!(matches!(env.advance_slot(&decisions), Err(Error::Constraint(_))));
    }

    #[test]
    fn out_of_budget_power_rejected() {
        let mut env = Env::new(small_cfg()).unwrap();
        let mut decisions = all_local(&env);
        decisions[1].tx_power_dbm = 30.0;
        assert!(matches!(env.advance_slot(&decisions), Err(Error::Constraint(_))));
    }

    #[test]
    fn batteries_stay_in_bounds_over_random_slots() {
        let cfg = EnvConfig { battery_mj: crate::Interval(0.5e-6, 1e-6), ..small_cfg() };
        let mut env = Env::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let decisions: Vec<SlotDecision> = (0..cfg.num_users)
                .map(|n| {
                    let f = rng.random_range(cfg.local_freq_hz().lo()..=cfg.local_freq_hz().hi());
                    SlotDecision::local(n, None, f, 5.0)
                })
                .collect();
            let deadlines: Vec<f64> = env.tasks().iter().map(|t| t.deadline_s).collect();
            let step = env.advance_slot(&decisions).unwrap();
            for o in &step.outcomes {
                assert!(o.battery_j >= 0.0 && o.battery_j <= cfg.b_max_j());
                assert!(o.penalty <= 0.0);
                assert!(o.delay_s >= 0.0 && o.energy_j >= 0.0);
                assert_eq!(o.timed_out, o.delay_s > deadlines[o.user]);
            }
            if step.done {
                env.reset();
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory() {
        let run = || {
            let mut env = Env::new(small_cfg()).unwrap();
            let mut out = Vec::new();
            for _ in 0..20 {
                let d = all_local(&env);
                out.push(env.advance_slot(&d).unwrap().outcomes);
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn done_after_configured_slots() {
        let mut env = Env::new(small_cfg()).unwrap();
        for t in 1..=10 {
            let d = all_local(&env);
            let step = env.advance_slot(&d).unwrap();
            assert_eq!(step.done, t == 10);
        }
    }
}
