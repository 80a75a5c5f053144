//! Fixed action sources used to collect data and to define evaluated policies.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::funcapprox::GaussianPolicy;
use crate::smdp::ActionSpace;
use crate::{Error, Result};

/// A stationary stochastic policy.
pub trait BehaviorPolicy {
    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    /// Exact action probabilities, when the action set is finite.
    fn probabilities(&self, _state: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Uniform over the action box or the discrete action set.
#[derive(Debug, Clone)]
pub struct UniformPolicy {
    pub action_space: ActionSpace,
}

impl BehaviorPolicy for UniformPolicy {
    fn sample(&self, _state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(match &self.action_space {
            ActionSpace::Discrete { n } => vec![rng.random_range(0..*n) as f64],
            ActionSpace::Continuous { low, high } => {
                low.iter().zip(high).map(|(l, h)| rng.random_range(*l..*h)).collect()
            }
        })
    }

    fn probabilities(&self, _state: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(match &self.action_space {
            ActionSpace::Discrete { n } => Some(vec![1.0 / *n as f64; *n]),
            ActionSpace::Continuous { .. } => None,
        })
    }
}

/// Per-state action distribution over a table whose states are `[index]`.
#[derive(Debug, Clone)]
pub struct TablePolicy {
    pub rows: Vec<Vec<f64>>,
}

impl TablePolicy {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in rows.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidArgument(format!("row {s} is not a distribution")));
            }
        }
        Ok(Self { rows })
    }

    /// Puts all mass on one action per state.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let rows = actions
            .iter()
            .map(|&a| {
                let mut r = vec![0.0; n_actions];
                r[a] = 1.0;
                r
            })
            .collect();
        Self { rows }
    }

    fn row(&self, state: &[f64]) -> Result<&[f64]> {
        let i = state.first().copied().unwrap_or(-1.0);
        if !(i >= 0.0) {
            return Err(Error::InvalidArgument("state outside policy table".into()));
        }
        self.rows
            .get(i as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidArgument("state outside policy table".into()))
    }
}

impl BehaviorPolicy for TablePolicy {
    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let row = self.row(state)?;
        let mut x: f64 = rng.random();
        for (a, p) in row.iter().enumerate() {
            x -= p;
            if x < 0.0 {
                return Ok(vec![a as f64]);
            }
        }
        Ok(vec![(row.len() - 1) as f64])
    }

    fn probabilities(&self, state: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(Some(self.row(state)?.to_vec()))
    }
}

/// Stochastic sampling from a Gaussian policy.
impl BehaviorPolicy for GaussianPolicy {
    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.sample_action(state, false, rng)?.0)
    }
}

/// Always returns the same action.
#[derive(Debug, Clone)]
pub struct ConstantPolicy(pub Vec<f64>);

impl BehaviorPolicy for ConstantPolicy {
    fn sample(&self, _state: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// Plays `inner` but replaces its action with a uniform one with probability `epsilon`.
pub struct EpsilonMixture<'a> {
    pub inner: &'a dyn BehaviorPolicy,
    pub uniform: UniformPolicy,
    pub epsilon: f64,
}

impl BehaviorPolicy for EpsilonMixture<'_> {
    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if rng.random::<f64>() < self.epsilon {
            self.uniform.sample(state, rng)
        } else {
            self.inner.sample(state, rng)
        }
    }
}
