use std::io::{Read, Write};
use std::path::PathBuf;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::agents::{AgentBundle, RoundStats};
use super::layout::CriticLayout;
use super::policy::{baseline_behavior, heuristic_score, select, Policy, RefinementRule, SelectionRule};
use super::{Experience, TrainConfig};
use crate::config::EnvConfig;
use crate::error::{Error, Result};
use crate::hybrid::{encode_state, final_decision, map_user_action, refine, state_dim, Candidate, MappedAction, ServerBudget, ACTION_DIM};
use crate::replay::{PriorityBuffer, PriorityConfig};
use crate::simcore::{Env, Observation, SlotDecision, SlotOutcome};

/// Column order of the per-episode training log.
pub const CSV_COLUMNS: [&str; 9] = [
    "episode",
    "mean_reward",
    "mean_cost",
    "timeout_pct",
    "participation_pct",
    "below_bmin_pct",
    "actor_loss",
    "critic_loss",
    "noise_scale",
];

/// One row of the training log. Losses are NaN for episodes without an
/// update round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_cost: f64,
    pub timeout_pct: f64,
    pub participation_pct: f64,
    pub below_bmin_pct: f64,
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub noise_scale: f64,
}

/// Decisions of one slot, for debugging traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub episode: usize,
    pub slot: usize,
    pub assignment: Vec<Option<usize>>,
    pub actions: Vec<[f64; ACTION_DIM]>,
    pub offload_requests: Vec<bool>,
    pub offloaded: Vec<bool>,
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub metrics: EpisodeMetrics,
    /// Sum of all users' costs over the episode.
    pub total_cost: f64,
    /// `outcomes[slot][user]`
    pub outcomes: Vec<Vec<SlotOutcome>>,
    /// `deadlines[slot][user]`, as seen when the slot was played.
    pub deadlines: Vec<Vec<f64>>,
    /// Filled only when tracing is on.
    pub traces: Vec<SlotTrace>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<EpisodeMetrics>,
    /// Per-episode total cost, parallel to `rows`.
    pub total_costs: Vec<f64>,
}

impl TrainingLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        if self.rows.is_empty() {
            out.write_record(CSV_COLUMNS)?;
        }
        for row in &self.rows {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Vec<EpisodeMetrics>> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_COLUMNS {
            return Err(Error::Structure(format!("unexpected CSV columns {header:?}")));
        }
        rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
    }

    /// Mean reward over the episodes in `range` (0-based, clipped).
    pub fn mean_reward(&self, range: std::ops::Range<usize>) -> f64 {
        let end = range.end.min(self.rows.len());
        let slice = &self.rows[range.start.min(end)..end];
        slice.iter().map(|r| r.mean_reward).sum::<f64>() / slice.len().max(1) as f64
    }
}

/// Runs one policy in one environment.
pub struct Trainer {
    env: Env,
    cfg: TrainConfig,
    policy: Policy,
    selection: SelectionRule,
    refinement: RefinementRule,
    bundle: AgentBundle,
    buffer: PriorityBuffer<Experience>,
    rng: ChaCha8Rng,
    episode: usize,
    rounds: u64,
    trace: bool,
    force_local: bool,
    abort_checkpoint: Option<PathBuf>,
}

impl Trainer {
    pub fn new(env_cfg: EnvConfig, cfg: TrainConfig, policy: Policy) -> Result<Self> {
        cfg.validate()?;
        let env = Env::new(env_cfg)?;
        let ec = env.config();
        let layout = CriticLayout::new(state_dim(ec.num_servers), ec.max_users_per_server);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let bundle = AgentBundle::new(ec.num_users, layout, &cfg, &mut rng);
        let buffer = PriorityBuffer::new(PriorityConfig {
            capacity: cfg.buffer_capacity,
            nu_r: cfg.nu_r,
            eps: cfg.priority_eps,
        })?;
        let (selection, refinement) = baseline_behavior(policy);
        Ok(Trainer {
            env,
            cfg,
            policy,
            selection,
            refinement,
            bundle,
            buffer,
            rng,
            episode: 0,
            rounds: 0,
            trace: false,
            force_local: false,
            abort_checkpoint: None,
        })
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn env_config(&self) -> &EnvConfig {
        self.env.config()
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn bundle(&self) -> &AgentBundle {
        &self.bundle
    }

    pub fn bundle_mut(&mut self) -> &mut AgentBundle {
        &mut self.bundle
    }

    pub fn buffer(&self) -> &PriorityBuffer<Experience> {
        &self.buffer
    }

    /// Episodes played so far.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Update rounds completed so far.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Record per-slot decisions in episode reports.
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on;
    }

    /// Turn every offload request into local execution.
    pub fn set_force_local(&mut self, on: bool) {
        self.force_local = on;
    }

    /// Where to save the networks if training aborts on a non-finite value.
    pub fn set_abort_checkpoint(&mut self, dir: Option<PathBuf>) {
        self.abort_checkpoint = dir;
    }

    fn states(&self, obs: &[Observation]) -> Result<Vec<Vec<f64>>> {
        let cfg = self.env.config();
        obs.iter().map(|o| encode_state(&o.device, &o.task, cfg).map(|s| s.0)).collect()
    }

    /// Ranking scores for `candidates` of server `m`.
    fn scores(
        &mut self,
        m: usize,
        roster: &[usize],
        candidates: &[usize],
        states: &[Vec<f64>],
        actions: &[[f64; ACTION_DIM]],
        mapped: &[MappedAction],
        obs: &[Observation],
    ) -> Result<Vec<f64>> {
        if self.refinement.is_learned() {
            if self.rounds == 0 {
                // No trained critic yet: rank at random.
                return Ok(candidates.iter().map(|_| self.rng.random::<f64>()).collect());
            }
            let rows = self.bundle.layout.candidate_rows(roster, states, actions, candidates)?;
            return self.bundle.q_scores(&rows);
        }
        let cfg = self.env.config();
        candidates
            .iter()
            .map(|&u| heuristic_score(self.refinement, cfg, &obs[u], &mapped[u], m))
            .collect()
    }

    fn play_slot(&mut self, noise: f64, report: &mut EpisodeReport) -> Result<bool> {
        let cfg = self.env.config().clone();
        let obs = self.env.observations();
        let states = self.states(&obs)?;
        let matching = select(self.selection, &cfg, &obs, &mut self.rng)?;
        let user_actions = self.bundle.act(&states, noise, &mut self.rng)?;
        let actions: Vec<[f64; ACTION_DIM]> = user_actions.iter().map(|a| a.to_array()).collect();
        let mut mapped: Vec<MappedAction> = user_actions.iter().map(|a| map_user_action(a, &cfg)).collect();
        if self.force_local {
            mapped.iter_mut().for_each(|m| m.offload_request = false);
        }

        let mut approved = vec![false; cfg.num_users];
        let budget = ServerBudget { subchannels: cfg.subchannels, storage_bits: cfg.storage_bits() };
        for (m, roster) in matching.rosters.iter().enumerate() {
            let requesting: Vec<usize> = roster.iter().copied().filter(|&u| mapped[u].offload_request).collect();
            if requesting.is_empty() {
                continue;
            }
            let scores = self.scores(m, roster, &requesting, &states, &actions, &mapped, &obs)?;
            let candidates: Vec<Candidate> = requesting
                .iter()
                .zip(&scores)
                .map(|(&user, &score)| Candidate { user, size_bits: obs[user].task.size_bits, score })
                .collect();
            for u in refine(roster, budget, &candidates)?.approved_users() {
                approved[u] = true;
            }
        }

        let decisions: Vec<SlotDecision> = (0..cfg.num_users)
            .map(|n| SlotDecision {
                user: n,
                offload: final_decision(mapped[n].offload_request, approved[n]),
                server: matching.assignment[n],
                local_freq_hz: mapped[n].local_freq_hz,
                tx_power_dbm: mapped[n].tx_power_dbm,
            })
            .collect();
        let slot = self.env.slot();
        let step = self.env.advance_slot(&decisions)?;
        let next_states = self.states(&step.next)?;
        let rewards: Vec<f64> = step.outcomes.iter().map(|o| o.reward).collect();
        let offloaded: Vec<bool> = decisions.iter().map(|d| d.offload).collect();

        if self.trace {
            report.traces.push(SlotTrace {
                episode: self.episode,
                slot,
                assignment: matching.assignment.clone(),
                actions: actions.clone(),
                offload_requests: mapped.iter().map(|m| m.offload_request).collect(),
                offloaded: offloaded.clone(),
                rewards: rewards.clone(),
            });
        }
        let exp = Experience {
            states,
            actions,
            assignment: matching.assignment,
            offloaded,
            rewards,
            next_states,
            terminal: step.done,
        };
        let mean_abs = exp.rewards.iter().map(|r| r.abs()).sum::<f64>() / cfg.num_users as f64;
        self.buffer.push(exp, mean_abs);
        report.deadlines.push(obs.iter().map(|o| o.task.deadline_s).collect());
        report.outcomes.push(step.outcomes);
        Ok(step.done)
    }

    /// Plays one episode with the current networks and stores its
    /// transitions. Does not update any network.
    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        let noise = self.cfg.noise.at(self.episode);
        self.env.reset();
        let mut report = EpisodeReport {
            metrics: EpisodeMetrics {
                episode: self.episode,
                mean_reward: 0.0,
                mean_cost: 0.0,
                timeout_pct: 0.0,
                participation_pct: 0.0,
                below_bmin_pct: 0.0,
                actor_loss: f64::NAN,
                critic_loss: f64::NAN,
                noise_scale: noise,
            },
            total_cost: 0.0,
            outcomes: Vec::new(),
            deadlines: Vec::new(),
            traces: Vec::new(),
        };
        while !self.play_slot(noise, &mut report)? {}

        let all: Vec<&SlotOutcome> = report.outcomes.iter().flatten().collect();
        let count = all.len().max(1) as f64;
        let pct = |f: &dyn Fn(&SlotOutcome) -> bool| 100.0 * all.iter().filter(|o| f(o)).count() as f64 / count;
        let m = &mut report.metrics;
        m.mean_reward = all.iter().map(|o| o.reward).sum::<f64>() / count;
        report.total_cost = all.iter().map(|o| o.cost).sum::<f64>();
        m.mean_cost = report.total_cost / count;
        m.timeout_pct = pct(&|o| o.timed_out);
        m.participation_pct = pct(&|o| o.offloaded);
        m.below_bmin_pct = pct(&|o| o.below_b_min);
        self.episode += 1;
        Ok(report)
    }

    /// Runs `train_rounds` update rounds if the buffer holds a full batch.
    /// Returns the per-round statistics.
    pub fn update(&mut self) -> Result<Vec<RoundStats>> {
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(Vec::new());
        }
        let mut stats = Vec::with_capacity(self.cfg.train_rounds);
        for _ in 0..self.cfg.train_rounds {
            let refs = self.buffer.sample(self.cfg.batch_size, &mut self.rng)?;
            let weights: Vec<f64> = if self.cfg.importance_weighting {
                let probs = self.buffer.probabilities();
                let len = self.buffer.len() as f64;
                let raw: Vec<f64> = refs.iter().map(|r| 1.0 / (len * probs[r.slot])).collect();
                let max = raw.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
                raw.iter().map(|w| w / max).collect()
            } else {
                refs.iter().map(|&r| self.buffer.priority_of(r).expect("fresh handle")).collect()
            };
            let batch: Vec<&Experience> = refs.iter().map(|&r| self.buffer.get(r).expect("fresh handle")).collect();
            let round = self.bundle.train_round(&batch, &weights, &self.cfg)?;
            self.buffer.update_priorities(&refs, &round.abs_rewards, &round.abs_td)?;
            self.rounds += 1;
            stats.push(round);
        }
        Ok(stats)
    }

    /// Plays `episodes` episodes, updating after each one.
    pub fn train(&mut self) -> Result<TrainingLog> {
        self.train_with(|_| Ok(()))
    }

    /// Like [`Trainer::train`], handing every finished episode's report to
    /// `on_episode` before moving on.
    pub fn train_with<F>(&mut self, mut on_episode: F) -> Result<TrainingLog>
    where
        F: FnMut(&EpisodeReport) -> Result<()>,
    {
        let mut log = TrainingLog::default();
        for _ in 0..self.cfg.episodes {
            let mut report = self.run_episode()?;
            let stats = match self.update() {
                Ok(s) => s,
                Err(e @ Error::Training(_)) => {
                    if let Some(dir) = &self.abort_checkpoint {
                        warn!("training aborted ({e}); saving networks to {}", dir.display());
                        self.bundle.save(dir)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            if !stats.is_empty() {
                let k = stats.len() as f64;
                report.metrics.actor_loss = -stats.iter().map(|s| s.actor_objective).sum::<f64>() / k;
                report.metrics.critic_loss = stats.iter().map(|s| s.server_critic_loss).sum::<f64>() / k;
            }
            debug!(
                "{} episode {} reward {:.4} cost {:.4}",
                self.policy, report.metrics.episode, report.metrics.mean_reward, report.metrics.mean_cost
            );
            on_episode(&report)?;
            log.total_costs.push(report.total_cost);
            log.rows.push(report.metrics);
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_env() -> EnvConfig {
        EnvConfig {
            num_users: 4,
            num_servers: 2,
            max_users_per_server: 2,
            cpus_per_server: 2,
            subchannels: 1,
            server_storage_mb: 60.0,
            seed: 3,
            ..EnvConfig::default()
        }
    }

    fn tiny_train(episodes: usize) -> TrainConfig {
        TrainConfig { episodes, batch_size: 8, hidden: vec![16], seed: 4, ..TrainConfig::default() }
    }

    #[test]
    fn zero_episodes_give_empty_log() {
        let mut t = Trainer::new(tiny_env(), tiny_train(0), Policy::Ucms).unwrap();
        let log = t.train().unwrap();
        assert!(log.rows.is_empty());
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), CSV_COLUMNS.join(","));
    }

    #[test]
    fn forced_local_never_offloads() {
        let mut t = Trainer::new(tiny_env(), tiny_train(3), Policy::Ucms).unwrap();
        t.set_force_local(true);
        let log = t.train().unwrap();
        assert!(log.rows.iter().all(|r| r.participation_pct == 0.0));
    }

    #[test]
    fn default_episode_has_ten_slots() {
        let mut t = Trainer::new(tiny_env(), tiny_train(1), Policy::Deadline).unwrap();
        let r = t.run_episode().unwrap();
        assert_eq!(r.outcomes.len(), 10);
        assert_eq!(t.buffer().len(), 10);
    }

    #[test]
    fn every_policy_runs_and_logs_csv() {
        for p in Policy::ALL {
            let mut t = Trainer::new(tiny_env(), tiny_train(3), p).unwrap();
            let log = t.train().unwrap();
            assert_eq!(log.rows.len(), 3);
            assert!(t.rounds() > 0);
            let mut buf = Vec::new();
            log.write_csv(&mut buf).unwrap();
            let back = TrainingLog::read_csv(buf.as_slice()).unwrap();
            assert_eq!(back.len(), 3);
            assert_eq!(back[2].mean_reward, log.rows[2].mean_reward);
        }
    }

    #[test]
    fn importance_weighting_switch_runs() {
        let cfg = TrainConfig { importance_weighting: true, ..tiny_train(2) };
        let mut t = Trainer::new(tiny_env(), cfg, Policy::Ucms).unwrap();
        t.train().unwrap();
        assert!(t.bundle().is_finite());
    }
}
