//! Tabular epsilon-greedy Q-learning for discrete task policies.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::StoredTransition;
use crate::envs::StateIndexer;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearnConfig {
    pub alpha: f64,
    pub explore_epsilon: f64,
    pub initial_q: f64,
}

impl Default for QLearnConfig {
    fn default() -> Self {
        Self { alpha: 0.1, explore_epsilon: 0.1, initial_q: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QLearner {
    pub q: Vec<f64>,
    pub n_states: usize,
    pub n_actions: usize,
    pub indexer: StateIndexer,
    pub gamma: f64,
    pub cfg: QLearnConfig,
}

/// Index of a maximal entry, ties broken uniformly.
fn argmax_random<R: Rng>(row: &[f64], rng: &mut R) -> usize {
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..row.len()).filter(|&i| row[i] == best).collect();
    ties[rng.random_range(0..ties.len())]
}

impl QLearner {
    pub fn new(n_states: usize, n_actions: usize, indexer: StateIndexer, gamma: f64, cfg: QLearnConfig) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action set".into()));
        }
        if !(0.0..=1.0).contains(&cfg.alpha) || !(0.0..=1.0).contains(&cfg.explore_epsilon) {
            return Err(Error::InvalidArgument("learning rate and exploration must lie in [0, 1]".into()));
        }
        Ok(Self { q: vec![cfg.initial_q; n_states * n_actions], n_states, n_actions, indexer, gamma, cfg })
    }

    fn index(&self, state: &[f64]) -> Result<usize> {
        let s = self.indexer.state_index(state);
        if s >= self.n_states {
            return Err(Error::InvalidArgument(format!("state index {s} outside table of {}", self.n_states)));
        }
        Ok(s)
    }

    pub fn row(&self, state: &[f64]) -> Result<&[f64]> {
        let s = self.index(state)?;
        Ok(&self.q[s * self.n_actions..(s + 1) * self.n_actions])
    }

    pub fn greedy<R: Rng>(&self, state: &[f64], rng: &mut R) -> Result<usize> {
        Ok(argmax_random(self.row(state)?, rng))
    }

    pub fn act<R: Rng>(&self, state: &[f64], explore: bool, rng: &mut R) -> Result<usize> {
        if explore && rng.random::<f64>() < self.cfg.explore_epsilon {
            return Ok(rng.random_range(0..self.n_actions));
        }
        self.greedy(state, rng)
    }

    /// `Q(s,a) += alpha (r + gamma (1 - done) max Q(s', .) - Q(s,a))`; returns the TD error.
    pub fn update(&mut self, t: &StoredTransition) -> Result<f64> {
        let s = self.index(&t.state)?;
        let a = crate::smdp::discrete_index(&t.action, self.n_actions);
        let target = if t.done {
            t.reward
        } else {
            t.reward + self.gamma * self.row(&t.next_state)?.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let cell = &mut self.q[s * self.n_actions + a];
        let td = target - *cell;
        *cell += self.cfg.alpha * td;
        Ok(td)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(s: f64, a: f64, r: f64, s2: f64, done: bool) -> StoredTransition {
        StoredTransition { state: vec![s], action: vec![a], reward: r, next_state: vec![s2], done }
    }

    #[test]
    fn terminal_update_moves_towards_reward() {
        let mut q = QLearner::new(2, 2, StateIndexer::Identity, 0.9, QLearnConfig { alpha: 0.5, ..Default::default() }).unwrap();
        q.update(&step(0.0, 1.0, 1.0, 1.0, true)).unwrap();
        assert_eq!(q.row(&[0.0]).unwrap(), &[0.0, 0.5]);
    }

    #[test]
    fn zero_rate_leaves_table_unchanged() {
        let mut q = QLearner::new(2, 2, StateIndexer::Identity, 0.9, QLearnConfig { alpha: 0.0, ..Default::default() }).unwrap();
        let before = q.q.clone();
        q.update(&step(0.0, 0.0, 3.0, 1.0, false)).unwrap();
        assert_eq!(q.q, before);
    }

    #[test]
    fn bootstrap_uses_next_state_max() {
        let mut q = QLearner::new(2, 2, StateIndexer::Identity, 0.5, QLearnConfig { alpha: 1.0, ..Default::default() }).unwrap();
        q.q[2..4].copy_from_slice(&[2.0, 4.0]);
        q.update(&step(0.0, 0.0, 1.0, 1.0, false)).unwrap();
        assert_eq!(q.q[0], 3.0);
    }

    #[test]
    fn ties_break_over_all_maxima() {
        let q = QLearner::new(1, 3, StateIndexer::Identity, 0.9, QLearnConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = [false; 3];
        for _ in 0..100 {
            seen[q.greedy(&[0.0], &mut rng).unwrap()] = true;
        }
        assert_eq!(seen, [true; 3]);
    }

    #[test]
    fn out_of_table_state_errors() {
        let q = QLearner::new(2, 2, StateIndexer::Identity, 0.9, QLearnConfig::default()).unwrap();
        assert!(q.row(&[5.0]).is_err());
    }
}
