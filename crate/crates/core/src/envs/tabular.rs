use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Env, StepResult};
use crate::funcapprox::FeatureMap;
use crate::oracle::TabularSmdp;
use crate::smdp::{discrete_index, ActionSpace, SmdpSpec};
use crate::{Error, Result};

/// Episodic wrapper over a [`TabularSmdp`]: state `[index]`, action `[index]`, zero reward.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    spec: SmdpSpec,
    smdp: TabularSmdp,
    state: usize,
    done: bool,
}

impl TabularEnv {
    pub fn new(smdp: TabularSmdp, horizon: usize, gamma: f64, gamma_safe: f64) -> Self {
        let spec = SmdpSpec {
            state_dim: 1,
            action_space: ActionSpace::Discrete { n: smdp.n_actions() },
            gamma,
            gamma_safe,
            horizon,
            initial_distribution: "uniform over the table's initial states".into(),
        };
        let state = smdp.initial_states()[0];
        Self { spec, smdp, state, done: false }
    }

    pub fn smdp(&self) -> &TabularSmdp {
        &self.smdp
    }

    pub fn set_index(&mut self, state: usize) {
        self.state = state;
        self.done = false;
    }
}

impl Env for TabularEnv {
    fn spec(&self) -> &SmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let starts: Vec<usize> =
            self.smdp.initial_states().iter().copied().filter(|&s| !self.smdp.is_fail(s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = starts[rng.random_range(0..starts.len())];
        self.done = false;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = discrete_index(action, self.smdp.n_actions());
        let cost = self.smdp.cost(self.state, a);
        self.state = self.smdp.successor(self.state, a);
        self.done = cost == 1;
        Ok(StepResult { next_state: self.state(), reward: 0.0, cost, done: self.done })
    }

    fn state(&self) -> Vec<f64> {
        vec![self.state as f64]
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::IndexOneHot { n: self.smdp.n_states() }
    }
}
