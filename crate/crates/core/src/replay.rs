//! Experience replay with a composite reward / TD-error priority.
//!
//! Each stored item carries `eta = nu_r (|r| + eps) + nu_delta (|delta| + eps)`
//! and is drawn with probability `eta_i / sum(eta)`, with replacement. New
//! items enter at the current maximum priority so they are seen before their
//! TD error is known.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorityConfig {
    pub capacity: usize,
    /// Weight on the reward term; the TD term gets `1 - nu_r`.
    pub nu_r: f64,
    pub eps: f64,
}

impl Default for PriorityConfig {
    fn default() -> Self {
        PriorityConfig { capacity: 100_000, nu_r: 0.5, eps: 1e-6 }
    }
}

impl PriorityConfig {
    pub fn nu_delta(&self) -> f64 {
        1.0 - self.nu_r
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("replay capacity must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.nu_r) {
            return Err(Error::Config(format!("nu_r = {} outside [0, 1]", self.nu_r)));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("priority floor must be positive".into()));
        }
        Ok(())
    }
}

/// Composite priority of one transition.
pub fn priority(reward: f64, td_error: f64, nu_r: f64, nu_delta: f64, eps: f64) -> f64 {
    nu_r * (reward.abs() + eps) + nu_delta * (td_error.abs() + eps)
}

/// Handle to a stored item. `seq` detects slots that have since been
/// overwritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub slot: usize,
    pub seq: u64,
}

#[derive(Debug, Clone)]
struct Entry<T> {
    item: T,
    reward: f64,
    td_error: Option<f64>,
    priority: f64,
    seq: u64,
}

#[derive(Debug, Clone)]
pub struct PriorityBuffer<T> {
    config: PriorityConfig,
    entries: Vec<Entry<T>>,
    next_slot: usize,
    next_seq: u64,
    stale_updates: u64,
}

impl<T> PriorityBuffer<T> {
    pub fn new(config: PriorityConfig) -> Result<Self> {
        config.validate()?;
        Ok(PriorityBuffer {
            config,
            entries: Vec::new(),
            next_slot: 0,
            next_seq: 0,
            stale_updates: 0,
        })
    }

    pub fn config(&self) -> &PriorityConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Priority updates dropped because their slot had been overwritten.
    pub fn stale_updates(&self) -> u64 {
        self.stale_updates
    }

    pub fn max_priority(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.priority).reduce(f64::max)
    }

    /// Stores `item`, evicting the oldest entry once full. `reward` is the
    /// scalar reward used by the priority's reward term.
    pub fn push(&mut self, item: T, reward: f64) -> SampleRef {
        let priority = self.max_priority().unwrap_or(self.config.eps);
        let seq = self.next_seq;
        self.next_seq += 1;
        let entry = Entry { item, reward, td_error: None, priority, seq };
        let slot = self.next_slot;
        if self.entries.len() < self.config.capacity {
            self.entries.push(entry);
        } else {
            self.entries[slot] = entry;
        }
        self.next_slot = (slot + 1) % self.config.capacity;
        SampleRef { slot, seq }
    }

    pub fn get(&self, r: SampleRef) -> Option<&T> {
        self.entries.get(r.slot).filter(|e| e.seq == r.seq).map(|e| &e.item)
    }

    pub fn priority_of(&self, r: SampleRef) -> Option<f64> {
        self.entries.get(r.slot).filter(|e| e.seq == r.seq).map(|e| e.priority)
    }

    pub fn td_error_of(&self, r: SampleRef) -> Option<f64> {
        self.entries.get(r.slot).filter(|e| e.seq == r.seq).and_then(|e| e.td_error)
    }

    pub fn priorities(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.priority).collect()
    }

    /// Sampling probability of every stored slot.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.entries.iter().map(|e| e.priority).sum();
        self.entries.iter().map(|e| e.priority / total).collect()
    }

    /// Draws `n` handles independently with probability proportional to
    /// priority.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<SampleRef>> {
        if self.entries.len() < n || self.entries.is_empty() {
            return Err(Error::NotReady { len: self.entries.len(), needed: n.max(1) });
        }
        let mut cumulative = Vec::with_capacity(self.entries.len());
        let mut acc = 0.0;
        for e in &self.entries {
            acc += e.priority;
            cumulative.push(acc);
        }
        let last = self.entries.len() - 1;
        Ok((0..n)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let slot = cumulative.partition_point(|&c| c <= u).min(last);
                SampleRef { slot, seq: self.entries[slot].seq }
            })
            .collect())
    }

    /// Recomputes priorities of sampled handles from `rewards` and fresh TD
    /// errors. Overwritten handles are skipped and counted.
    pub fn update_priorities(&mut self, refs: &[SampleRef], rewards: &[f64], td_errors: &[f64]) -> Result<()> {
        if refs.len() != rewards.len() || refs.len() != td_errors.len() {
            return Err(Error::Shape { expected: refs.len(), got: rewards.len().min(td_errors.len()) });
        }
        let PriorityConfig { nu_r, eps, .. } = self.config;
        let nu_delta = self.config.nu_delta();
        for ((r, &reward), &td) in refs.iter().zip(rewards).zip(td_errors) {
            match self.entries.get_mut(r.slot).filter(|e| e.seq == r.seq) {
                Some(e) => {
                    e.reward = reward;
                    e.td_error = Some(td);
                    e.priority = priority(reward, td, nu_r, nu_delta, eps);
                }
                None => self.stale_updates += 1,
            }
        }
        Ok(())
    }

    /// Stored reward of a handle.
    pub fn reward_of(&self, r: SampleRef) -> Option<f64> {
        self.entries.get(r.slot).filter(|e| e.seq == r.seq).map(|e| e.reward)
    }

    /// Equal-width histogram of current priorities as `(lo, hi, count)`.
    pub fn priority_histogram(&self, bins: usize) -> Vec<(f64, f64, usize)> {
        let Some(max) = self.max_priority() else {
            return Vec::new();
        };
        let min = self.entries.iter().map(|e| e.priority).fold(f64::INFINITY, f64::min);
        let bins = bins.max(1);
        let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
        let mut counts = vec![0usize; bins];
        for e in &self.entries {
            let b = (((e.priority - min) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, c)| (min + i as f64 * width, min + (i + 1) as f64 * width, c))
            .collect()
    }
}

/// Pearson chi-square statistic of observed counts against expected
/// probabilities.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper critical value of the chi-square distribution.
pub fn chi_square_critical(dof: usize, alpha: f64) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(1.0 - alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn buffer(capacity: usize) -> PriorityBuffer<u32> {
        PriorityBuffer::new(PriorityConfig { capacity, ..PriorityConfig::default() }).unwrap()
    }

    #[test]
    fn priority_spot_values() {
        assert!((priority(-2.0, 0.5, 0.5, 0.5, 1e-6) - 1.250001).abs() < 1e-12);
        assert_eq!(priority(0.0, 0.0, 0.5, 0.5, 1e-6), 1e-6);
        assert_eq!(priority(3.0, 0.0, 1.0, 0.0, 1e-6), priority(3.0, 99.0, 1.0, 0.0, 1e-6));
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(PriorityBuffer::<u8>::new(PriorityConfig { capacity: 0, ..Default::default() }).is_err());
        assert!(PriorityBuffer::<u8>::new(PriorityConfig { nu_r: 1.5, ..Default::default() }).is_err());
        assert!(PriorityBuffer::<u8>::new(PriorityConfig { eps: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn first_push_gets_floor_priority() {
        let mut b = buffer(4);
        let r = b.push(1, -3.0);
        assert_eq!(b.len(), 1);
        assert_eq!(b.priority_of(r), Some(1e-6));
    }

    #[test]
    fn new_items_enter_at_max_priority() {
        let mut b = buffer(4);
        let r0 = b.push(1, -3.0);
        b.update_priorities(&[r0], &[-3.0], &[1.0]).unwrap();
        let r1 = b.push(2, 0.0);
        assert_eq!(b.priority_of(r1), b.priority_of(r0));
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = buffer(3);
        let first = b.push(0, 0.0);
        for i in 1..=3 {
            b.push(i, 0.0);
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(first), None);
        let mut items: Vec<u32> = (0..3).map(|s| b.entries[s].item).collect();
        items.sort();
        assert_eq!(items, vec![1, 2, 3]);
    }

    #[test]
    fn stale_updates_are_counted() {
        let mut b = buffer(2);
        let old = b.push(0, 0.0);
        b.push(1, 0.0);
        b.push(2, 0.0);
        b.update_priorities(&[old], &[1.0], &[1.0]).unwrap();
        assert_eq!(b.stale_updates(), 1);
    }

    #[test]
    fn underfull_sample_is_not_ready() {
        let mut b = buffer(8);
        b.push(0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(b.sample(2, &mut rng), Err(Error::NotReady { len: 1, needed: 2 })));
    }

    #[test]
    fn two_item_probabilities() {
        let mut b = buffer(2);
        let a = b.push(0, 0.0);
        let c = b.push(1, 0.0);
        // eta = 0.5(|r| + eps) + 0.5(|d| + eps) = 1.25 and 3.75
        b.update_priorities(&[a, c], &[1.25 - 1e-6, 3.75 - 1e-6], &[1.25 - 1e-6, 3.75 - 1e-6]).unwrap();
        let p = b.probabilities();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn uniform_priorities_sample_uniformly() {
        let mut b = buffer(10);
        for i in 0..10 {
            b.push(i, 0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = vec![0usize; 10];
        for _ in 0..10_000 {
            for r in b.sample(10, &mut rng).unwrap() {
                counts[r.slot] += 1;
            }
        }
        assert!(chi_square(&counts, &b.probabilities()) < chi_square_critical(9, 0.01));
    }

    #[test]
    fn reward_term_floors_priority() {
        let mut b = buffer(1);
        let r = b.push(0, -10.0);
        b.update_priorities(&[r], &[-10.0], &[0.0]).unwrap();
        assert!(b.priority_of(r).unwrap() >= 0.5 * (10.0 + 1e-6));
        let before = b.priority_of(r);
        b.update_priorities(&[r], &[-10.0], &[0.0]).unwrap();
        assert_eq!(b.priority_of(r), before);
    }

    #[test]
    fn histogram_counts_everything() {
        let mut b = buffer(16);
        for i in 0..16 {
            let r = b.push(i, 0.0);
            b.update_priorities(&[r], &[i as f64], &[0.0]).unwrap();
        }
        let h = b.priority_histogram(4);
        assert_eq!(h.iter().map(|x| x.2).sum::<usize>(), 16);
    }
}
