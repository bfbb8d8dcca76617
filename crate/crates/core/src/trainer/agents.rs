use std::fs;
use std::path::Path;

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layout::CriticLayout;
use super::{Experience, TrainConfig};
use crate::error::{Error, Result};
use crate::hybrid::{UserAction, ACTION_DIM};
use crate::tinynet::{self, Activation, Adam, AdamConfig, Mlp};

/// Losses and diagnostics from one update round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub server_critic_loss: f64,
    /// Mean over users.
    pub user_critic_loss: f64,
    /// Mean server-critic value of the regenerated actions.
    pub actor_objective: f64,
    /// Mean over users of the actor gradient norm.
    pub actor_grad_norm: f64,
    /// Per sampled experience: mean over users of `|r|`.
    pub abs_rewards: Vec<f64>,
    /// Per sampled experience: mean over users of `|y - Q|` under the server
    /// critic, before its update.
    pub abs_td: Vec<f64>,
}

/// Every network and optimizer state of one run.
#[derive(Debug, Clone)]
pub struct AgentBundle {
    pub layout: CriticLayout,
    pub actors: Vec<Mlp>,
    pub target_actors: Vec<Mlp>,
    pub user_critics: Vec<Mlp>,
    pub target_user_critics: Vec<Mlp>,
    pub server_critic: Mlp,
    pub target_server_critic: Mlp,
    actor_opts: Vec<Adam>,
    user_critic_opts: Vec<Adam>,
    server_critic_opt: Adam,
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(input);
    w.extend_from_slice(hidden);
    w.push(output);
    w
}

fn check_finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("non-finite {what}")))
    }
}

impl AgentBundle {
    pub fn new<R: Rng + ?Sized>(num_users: usize, layout: CriticLayout, cfg: &TrainConfig, rng: &mut R) -> Self {
        let actor_w = widths(layout.state_dim, &cfg.hidden, ACTION_DIM);
        let critic_w = widths(layout.input_dim(), &cfg.hidden, 1);
        let actors: Vec<Mlp> =
            (0..num_users).map(|_| Mlp::new(&actor_w, Activation::Relu, Activation::Sigmoid, rng)).collect();
        let user_critics: Vec<Mlp> =
            (0..num_users).map(|_| Mlp::new(&critic_w, Activation::Relu, Activation::Identity, rng)).collect();
        let server_critic = Mlp::new(&critic_w, Activation::Relu, Activation::Identity, rng);
        let actor_cfg = AdamConfig::with_lr(cfg.actor_lr);
        let critic_cfg = AdamConfig::with_lr(cfg.critic_lr);
        AgentBundle {
            layout,
            actor_opts: actors.iter().map(|a| Adam::for_net(actor_cfg, a)).collect(),
            user_critic_opts: user_critics.iter().map(|c| Adam::for_net(critic_cfg, c)).collect(),
            server_critic_opt: Adam::for_net(critic_cfg, &server_critic),
            target_actors: actors.clone(),
            target_user_critics: user_critics.clone(),
            target_server_critic: server_critic.clone(),
            actors,
            user_critics,
            server_critic,
        }
    }

    pub fn num_users(&self) -> usize {
        self.actors.len()
    }

    fn all_nets(&self) -> impl Iterator<Item = &Mlp> {
        self.actors
            .iter()
            .chain(&self.target_actors)
            .chain(&self.user_critics)
            .chain(&self.target_user_critics)
            .chain([&self.server_critic, &self.target_server_critic])
    }

    pub fn is_finite(&self) -> bool {
        self.all_nets().all(Mlp::is_finite)
    }

    /// Actor outputs plus Gaussian noise of standard deviation `noise_scale`,
    /// clamped to `[0, 1]`. No noise is drawn when the scale is zero.
    pub fn act<R: Rng + ?Sized>(&self, states: &[Vec<f64>], noise_scale: f64, rng: &mut R) -> Result<Vec<UserAction>> {
        if states.len() != self.num_users() {
            return Err(Error::Shape { expected: self.num_users(), got: states.len() });
        }
        let normal = Normal::new(0.0, noise_scale.max(0.0)).map_err(|e| Error::Domain(e.to_string()))?;
        states
            .iter()
            .zip(&self.actors)
            .map(|(s, actor)| {
                let mut out = actor.forward_one(s)?;
                if noise_scale > 0.0 {
                    for v in &mut out {
                        *v += normal.sample(rng);
                    }
                }
                out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                Ok(UserAction::from_slice(&out))
            })
            .collect()
    }

    /// Server-critic values of the given critic input rows.
    pub fn q_scores(&self, rows: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.server_critic.forward(rows.view())?.into_iter().collect())
    }

    /// Critic inputs for the whole batch, row `n * B + b` for user `n` of
    /// experience `b`. Users without a server get an all-zero row.
    fn critic_inputs(
        &self,
        batch: &[&Experience],
        states_of: impl Fn(&Experience) -> &Vec<Vec<f64>>,
        actions_of: impl Fn(usize) -> Vec<[f64; ACTION_DIM]>,
    ) -> Result<Array2<f64>> {
        let b_len = batch.len();
        let n_users = self.num_users();
        let mut x = Array2::zeros((n_users * b_len, self.layout.input_dim()));
        for (b, exp) in batch.iter().enumerate() {
            let actions = actions_of(b);
            let states = states_of(exp);
            let num_servers = exp.assignment.iter().flatten().max().map_or(0, |m| m + 1);
            let rosters: Vec<Vec<usize>> = (0..num_servers).map(|m| exp.roster(m)).collect();
            for n in 0..n_users {
                let Some(m) = exp.assignment[n] else { continue };
                let mut row = x.row_mut(n * b_len + b);
                let slice = row.as_slice_mut().expect("row-major");
                let candidate = exp.offloaded[n].then_some(n);
                self.layout.fill_row(slice, &rosters[m], states, &actions, candidate)?;
            }
        }
        Ok(x)
    }

    fn stack_states(batch: &[&Experience], n: usize, next: bool) -> Array2<f64> {
        let dim = batch[0].states[n].len();
        let mut out = Array2::zeros((batch.len(), dim));
        for (b, exp) in batch.iter().enumerate() {
            let s = if next { &exp.next_states[n] } else { &exp.states[n] };
            out.row_mut(b).iter_mut().zip(s).for_each(|(o, &v)| *o = v);
        }
        out
    }

    /// Target-actor actions at the next states, `[b][n]`.
    fn next_actions(&self, batch: &[&Experience]) -> Result<Vec<Vec<[f64; ACTION_DIM]>>> {
        let mut out = vec![vec![[0.0; ACTION_DIM]; self.num_users()]; batch.len()];
        for (n, actor) in self.target_actors.iter().enumerate() {
            let a = actor.forward(Self::stack_states(batch, n, true).view())?;
            for (b, row) in a.outer_iter().enumerate() {
                out[b][n].iter_mut().zip(row).for_each(|(o, &v)| *o = v);
            }
        }
        Ok(out)
    }

    /// Rows of `q_next` are `(n - first_user) * B + b`.
    fn bootstrap(batch: &[&Experience], q_next: &Array2<f64>, first_user: usize, gamma: f64, reward_scale: f64) -> Vec<f64> {
        let b_len = batch.len();
        (0..q_next.nrows())
            .map(|row| {
                let (n, b) = (first_user + row / b_len, row % b_len);
                let exp = batch[b];
                let r = reward_scale * exp.rewards[n];
                if exp.terminal {
                    r
                } else {
                    r + gamma * q_next[[row, 0]]
                }
            })
            .collect()
    }

    /// Server-critic targets `y = r + gamma * Q'(next view)`, computed with
    /// target actors and the target server critic only. Row order is
    /// `n * B + b`.
    pub fn target_q(&self, batch: &[&Experience], gamma: f64, reward_scale: f64) -> Result<Vec<f64>> {
        let next = self.next_actions(batch)?;
        let x = self.critic_inputs(batch, |e| &e.next_states, |b| next[b].clone())?;
        let q = self.target_server_critic.forward(x.view())?;
        Ok(Self::bootstrap(batch, &q, 0, gamma, reward_scale))
    }

    /// Weighted squared-error loss `mean(w * (y - Q)^2)` of `net` on `x`,
    /// with one weight per experience. Returns the loss, the residuals and
    /// the parameter gradients.
    pub fn critic_loss(
        net: &Mlp,
        x: &Array2<f64>,
        y: &[f64],
        weights: &[f64],
    ) -> Result<(f64, Vec<f64>, tinynet::Gradients)> {
        let rows = x.nrows();
        if y.len() != rows || weights.is_empty() || rows % weights.len() != 0 {
            return Err(Error::Shape { expected: rows, got: y.len() });
        }
        let b_len = weights.len();
        let trace = net.forward_trace(x.view())?;
        let q = trace.output();
        let mut loss = 0.0;
        let mut residuals = Vec::with_capacity(rows);
        let mut upstream = Array2::zeros((rows, 1));
        for row in 0..rows {
            let w = weights[row % b_len];
            let d = y[row] - q[[row, 0]];
            loss += w * d * d;
            upstream[[row, 0]] = -2.0 * w * d / rows as f64;
            residuals.push(d);
        }
        let loss = check_finite(loss / rows as f64, "critic loss")?;
        let (grads, _) = net.backward(&trace, upstream.view())?;
        Ok((loss, residuals, grads))
    }

    /// One update round on a sampled batch: server critic, user critics,
    /// actors, then soft updates of every target network. `weights` holds
    /// one loss weight per experience.
    pub fn train_round(&mut self, batch: &[&Experience], weights: &[f64], cfg: &TrainConfig) -> Result<RoundStats> {
        if batch.is_empty() || weights.len() != batch.len() {
            return Err(Error::Shape { expected: batch.len(), got: weights.len() });
        }
        let b_len = batch.len();
        let n_users = self.num_users();

        // Targets first, from target networks only.
        let next = self.next_actions(batch)?;
        let x_next = self.critic_inputs(batch, |e| &e.next_states, |b| next[b].clone())?;
        let y_server =
            Self::bootstrap(batch, &self.target_server_critic.forward(x_next.view())?, 0, cfg.gamma, cfg.reward_scale);
        let mut y_user = Vec::with_capacity(n_users * b_len);
        for n in 0..n_users {
            let rows = x_next.slice(s![n * b_len..(n + 1) * b_len, ..]);
            let q = self.target_user_critics[n].forward(rows)?;
            y_user.extend(Self::bootstrap(batch, &q, n, cfg.gamma, cfg.reward_scale));
        }

        let x = self.critic_inputs(batch, |e| &e.states, |b| batch[b].actions.clone())?;

        let (server_loss, residuals, grads) = Self::critic_loss(&self.server_critic, &x, &y_server, weights)?;
        self.server_critic_opt.step(&mut self.server_critic, &grads)?;

        let mut user_loss = 0.0;
        for n in 0..n_users {
            let rows = x.slice(s![n * b_len..(n + 1) * b_len, ..]).to_owned();
            let y = &y_user[n * b_len..(n + 1) * b_len];
            let (loss, _, grads) = Self::critic_loss(&self.user_critics[n], &rows, y, weights)?;
            self.user_critic_opts[n].step(&mut self.user_critics[n], &grads)?;
            user_loss += loss / n_users as f64;
        }

        let mut objective = 0.0;
        let mut grad_norm = 0.0;
        for n in 0..n_users {
            let (q_mean, norm) = self.actor_step(batch, &x, n)?;
            objective += q_mean / n_users as f64;
            grad_norm += norm / n_users as f64;
        }

        for n in 0..n_users {
            self.target_actors[n].soft_update(&self.actors[n], cfg.omega)?;
            self.target_user_critics[n].soft_update(&self.user_critics[n], cfg.omega)?;
        }
        self.target_server_critic.soft_update(&self.server_critic, cfg.omega)?;
        if !self.is_finite() {
            return Err(Error::Training("non-finite network parameter after update".into()));
        }

        let mut abs_rewards = vec![0.0; b_len];
        let mut abs_td = vec![0.0; b_len];
        for (b, exp) in batch.iter().enumerate() {
            abs_rewards[b] = exp.rewards.iter().map(|r| r.abs()).sum::<f64>() / n_users as f64;
            abs_td[b] = (0..n_users).map(|n| residuals[n * b_len + b].abs()).sum::<f64>() / n_users as f64;
        }
        Ok(RoundStats {
            server_critic_loss: server_loss,
            user_critic_loss: user_loss,
            actor_objective: objective,
            actor_grad_norm: grad_norm,
            abs_rewards,
            abs_td,
        })
    }

    /// Replaces user `n`'s stored action with a fresh online-actor action in
    /// its rows of `x`, ascends the mean server-critic value through the
    /// actor, and returns `(mean Q, gradient norm)`.
    fn actor_step(&mut self, batch: &[&Experience], x: &Array2<f64>, n: usize) -> Result<(f64, f64)> {
        let b_len = batch.len();
        let states = Self::stack_states(batch, n, false);
        let actor_trace = self.actors[n].forward_trace(states.view())?;
        let actions = actor_trace.output().clone();

        let mut rows = x.slice(s![n * b_len..(n + 1) * b_len, ..]).to_owned();
        let mut offsets: Vec<Vec<usize>> = vec![Vec::new(); b_len];
        for (b, exp) in batch.iter().enumerate() {
            let Some(m) = exp.assignment[n] else { continue };
            let roster = exp.roster(m);
            if let Some(o) = self.layout.view_action_offset(&roster, n) {
                offsets[b].push(o);
            }
            if exp.offloaded[n] {
                offsets[b].push(self.layout.candidate_action_offset());
            }
            for &o in &offsets[b] {
                for k in 0..ACTION_DIM {
                    rows[[b, o + k]] = actions[[b, k]];
                }
            }
        }

        let critic_trace = self.server_critic.forward_trace(rows.view())?;
        let q_mean = check_finite(critic_trace.output().mean().unwrap_or(0.0), "actor objective")?;
        // Descend on -mean(Q).
        let upstream = Array2::from_elem((b_len, 1), -1.0 / b_len as f64);
        let dx = self.server_critic.input_gradient(&critic_trace, upstream.view())?;
        let mut da = Array2::zeros((b_len, ACTION_DIM));
        for (b, offs) in offsets.iter().enumerate() {
            for &o in offs {
                for k in 0..ACTION_DIM {
                    da[[b, k]] += dx[[b, o + k]];
                }
            }
        }
        let (grads, _) = self.actors[n].backward(&actor_trace, da.view())?;
        let norm = grads.norm();
        self.actor_opts[n].step(&mut self.actors[n], &grads)?;
        Ok((q_mean, norm))
    }

    /// Writes every network to `dir` in tinynet's checkpoint format.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (n, (a, c)) in self.actors.iter().zip(&self.user_critics).enumerate() {
            tinynet::save(a, &dir.join(format!("actor_{n}.bin")))?;
            tinynet::save(&self.target_actors[n], &dir.join(format!("target_actor_{n}.bin")))?;
            tinynet::save(c, &dir.join(format!("user_critic_{n}.bin")))?;
            tinynet::save(&self.target_user_critics[n], &dir.join(format!("target_user_critic_{n}.bin")))?;
        }
        tinynet::save(&self.server_critic, &dir.join("server_critic.bin"))?;
        tinynet::save(&self.target_server_critic, &dir.join("target_server_critic.bin"))?;
        Ok(())
    }

    /// Restores networks saved by [`AgentBundle::save`]. Optimizer moments
    /// restart from zero.
    pub fn load(&mut self, dir: &Path) -> Result<()> {
        let fetch = |name: String, like: &Mlp| -> Result<Mlp> {
            let net = tinynet::load(&dir.join(&name))?;
            if net.widths() != like.widths() {
                return Err(Error::Structure(format!("{name} has widths {:?}, expected {:?}", net.widths(), like.widths())));
            }
            Ok(net)
        };
        let mut loaded = self.clone();
        for n in 0..self.num_users() {
            loaded.actors[n] = fetch(format!("actor_{n}.bin"), &self.actors[n])?;
            loaded.target_actors[n] = fetch(format!("target_actor_{n}.bin"), &self.actors[n])?;
            loaded.user_critics[n] = fetch(format!("user_critic_{n}.bin"), &self.user_critics[n])?;
            loaded.target_user_critics[n] = fetch(format!("target_user_critic_{n}.bin"), &self.user_critics[n])?;
        }
        loaded.server_critic = fetch("server_critic.bin".into(), &self.server_critic)?;
        loaded.target_server_critic = fetch("target_server_critic.bin".into(), &self.server_critic)?;
        *self = loaded;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::Dense;
    use ndarray::{array, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> TrainConfig {
        TrainConfig { hidden: vec![8], ..TrainConfig::default() }
    }

    fn experience(terminal: bool, sd: usize, n: usize, rng: &mut ChaCha8Rng) -> Experience {
        let st = |rng: &mut ChaCha8Rng| (0..n).map(|_| (0..sd).map(|_| rng.random::<f64>()).collect()).collect();
        Experience {
            states: st(rng),
            actions: (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
            assignment: (0..n).map(|i| if i % 3 == 2 { None } else { Some(i % 2) }).collect(),
            offloaded: (0..n).map(|i| i % 3 == 0).collect(),
            rewards: (0..n).map(|_| -rng.random::<f64>() * 5.0).collect(),
            next_states: st(rng),
            terminal,
        }
    }

    fn bundle(n: usize, rng: &mut ChaCha8Rng) -> AgentBundle {
        AgentBundle::new(n, CriticLayout::new(4, 3), &small_cfg(), rng)
    }

    #[test]
    fn zero_noise_is_deterministic_and_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = bundle(3, &mut rng);
        let states = vec![vec![0.2; 4], vec![0.5; 4], vec![0.9; 4]];
        let a1 = b.act(&states, 0.0, &mut rng).unwrap();
        let a2 = b.act(&states, 0.0, &mut rng).unwrap();
        assert_eq!(a1, a2);
        let noisy = b.act(&states, 5.0, &mut rng).unwrap();
        assert!(noisy.iter().all(|a| a.is_valid()));
    }

    #[test]
    fn terminal_and_zero_gamma_targets_equal_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = bundle(4, &mut rng);
        let term = experience(true, 4, 4, &mut rng);
        let live = experience(false, 4, 4, &mut rng);
        let y = b.target_q(&[&term], 0.99, 1.0).unwrap();
        assert_eq!(y, term.rewards);
        let y = b.target_q(&[&live], 1e-300, 1.0).unwrap();
        for (a, r) in y.iter().zip(&live.rewards) {
            assert!((a - r).abs() < 1e-12);
        }
    }

    #[test]
    fn targets_ignore_online_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = bundle(4, &mut rng);
        let batch: Vec<Experience> = (0..5).map(|_| experience(false, 4, 4, &mut rng)).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let before = b.target_q(&refs, 0.9, 1.0).unwrap();
        for net in b.actors.iter_mut().chain(b.user_critics.iter_mut()).chain([&mut b.server_critic]) {
            net.layers_mut().iter_mut().for_each(|l| l.weights.mapv_inplace(|w| w * 3.0 + 1.0));
        }
        assert_eq!(b.target_q(&refs, 0.9, 1.0).unwrap(), before);
    }

    #[test]
    fn one_user_one_server_target_matches_manual_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let layout = CriticLayout::new(2, 1);
        let b = AgentBundle::new(1, layout, &small_cfg(), &mut rng);
        let exp = Experience {
            states: vec![vec![0.3, 0.7]],
            actions: vec![[0.9, 0.2, 0.4]],
            assignment: vec![Some(0)],
            offloaded: vec![true],
            rewards: vec![-2.0],
            next_states: vec![vec![0.6, 0.1]],
            terminal: false,
        };
        let a = b.target_actors[0].forward_one(&[0.6, 0.1]).unwrap();
        let input = [0.6, 0.1, a[0], a[1], a[2], 0.6, 0.1, a[0], a[1], a[2]];
        let q = b.target_server_critic.forward_one(&input).unwrap()[0];
        let y = b.target_q(&[&exp], 0.5, 1.0).unwrap();
        assert_eq!(y, vec![-2.0 + 0.5 * q]);
    }

    #[test]
    fn critic_loss_zero_at_fit_and_linear_in_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::new(&[3, 5, 1], Activation::Relu, Activation::Identity, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random::<f64>());
        let q: Vec<f64> = net.forward(x.view()).unwrap().into_iter().collect();
        let (loss, _, grads) = AgentBundle::critic_loss(&net, &x, &q, &[1.0, 2.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.norm(), 0.0);

        let y: Vec<f64> = q.iter().map(|v| v + 1.5).collect();
        let (l1, _, _) = AgentBundle::critic_loss(&net, &x, &y, &[1.0, 3.0]).unwrap();
        let (l2, _, _) = AgentBundle::critic_loss(&net, &x, &y, &[2.0, 6.0]).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn critic_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Mlp::new(&[3, 6, 1], Activation::Relu, Activation::Identity, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
        let w = [0.5, 1.5, 2.0];
        let (_, _, grads) = AgentBundle::critic_loss(&net, &x, &y, &w).unwrap();
        let analytic = grads.flatten();
        let params = net.params_flat();
        let h = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            let mut plus = net.clone();
            plus.set_params_flat(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.set_params_flat(&p).unwrap();
            let lp = AgentBundle::critic_loss(&plus, &x, &y, &w).unwrap().0;
            let lm = AgentBundle::critic_loss(&minus, &x, &y, &w).unwrap().0;
            let numeric = (lp - lm) / (2.0 * h);
            assert!(
                tinynet::gradcheck::relative_error(analytic[i], numeric) < 1e-4,
                "param {i}: {} vs {numeric}",
                analytic[i]
            );
        }
    }

    #[test]
    fn flat_critic_leaves_actor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b = bundle(3, &mut rng);
        for l in b.server_critic.layers_mut() {
            l.weights.fill(0.0);
        }
        let before = b.actors.clone();
        let batch: Vec<Experience> = (0..4).map(|_| experience(false, 4, 3, &mut rng)).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let x = b.critic_inputs(&refs, |e| &e.states, |i| refs[i].actions.clone()).unwrap();
        for n in 0..3 {
            let (_, norm) = b.actor_step(&refs, &x, n).unwrap();
            assert_eq!(norm, 0.0);
        }
        assert_eq!(b.actors, before);
    }

    #[test]
    fn scalar_actor_moves_along_critic_slope() {
        // Actor: one sigmoid unit with a bias; critic: linear in the
        // candidate's offload component with slope c.
        let layout = CriticLayout::new(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for &c in &[2.0, -2.0] {
            let mut b = AgentBundle::new(1, layout, &small_cfg(), &mut rng);
            let actor = Dense { weights: Array2::zeros((1, 3)), bias: Array1::zeros(3) };
            b.actors[0] = Mlp::from_layers(vec![actor], Activation::Relu, Activation::Sigmoid).unwrap();
            b.actor_opts[0] = Adam::for_net(AdamConfig::with_lr(0.1), &b.actors[0]);
            let mut w = Array2::zeros((layout.input_dim(), 1));
            w[[layout.candidate_action_offset(), 0]] = c;
            b.server_critic =
                Mlp::from_layers(vec![Dense { weights: w, bias: array![0.0] }], Activation::Relu, Activation::Identity)
                    .unwrap();
            let exp = Experience {
                states: vec![vec![0.5]],
                actions: vec![[0.5, 0.5, 0.5]],
                assignment: vec![Some(0)],
                offloaded: vec![true],
                rewards: vec![0.0],
                next_states: vec![vec![0.5]],
                terminal: true,
            };
            let refs = [&exp];
            let x = b.critic_inputs(&refs, |e| &e.states, |_| exp.actions.clone()).unwrap();
            b.actor_step(&refs, &x, 0).unwrap();
            let bias = b.actors[0].layers()[0].bias[0];
            assert_eq!(bias.signum(), c.signum(), "slope {c} gave bias {bias}");
            assert_eq!(b.actors[0].layers()[0].bias[1], 0.0);
        }
    }

    #[test]
    fn train_round_changes_targets_only_by_soft_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut b = bundle(3, &mut rng);
        let cfg = TrainConfig { omega: 0.25, ..small_cfg() };
        let batch: Vec<Experience> = (0..6).map(|_| experience(false, 4, 3, &mut rng)).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let old_target = b.target_server_critic.clone();
        let stats = b.train_round(&refs, &[1.0; 6], &cfg).unwrap();
        assert_eq!(stats.abs_td.len(), 6);
        let mut expected = old_target;
        expected.soft_update(&b.server_critic, 0.25).unwrap();
        assert_eq!(b.target_server_critic, expected);
        assert!(b.is_finite());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = bundle(2, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        b.save(dir.path()).unwrap();
        let mut other = bundle(2, &mut rng);
        other.load(dir.path()).unwrap();
        assert_eq!(other.actors, b.actors);
        assert_eq!(other.target_server_critic, b.target_server_critic);
    }
}
