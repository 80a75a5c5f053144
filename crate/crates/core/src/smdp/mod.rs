//! Binary-cost safe MDP vocabulary shared by every other module.

pub(crate) mod io;

pub use io::{read_transitions_bin, read_transitions_csv, write_transitions_bin, write_transitions_csv};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Action space of an environment.
///
/// Discrete actions are carried in a one-element vector holding the action index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Continuous { low: Vec<f64>, high: Vec<f64> },
    Discrete { n: usize },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Continuous { low, .. } => low.len(),
            ActionSpace::Discrete { .. } => 1,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    /// Clamps a continuous action into the box, or rounds and clamps a discrete index.
    pub fn clamp(&self, action: &[f64]) -> Vec<f64> {
        match self {
            ActionSpace::Continuous { low, high } => action
                .iter()
                .zip(low.iter().zip(high))
                .map(|(&a, (&lo, &hi))| if a.is_nan() { 0.5 * (lo + hi) } else { a.clamp(lo, hi) })
                .collect(),
            ActionSpace::Discrete { n } => vec![discrete_index(action, *n) as f64],
        }
    }
}

/// Interprets a one-element action vector as a discrete index in `0..n`.
pub fn discrete_index(action: &[f64], n: usize) -> usize {
    let raw = action.first().copied().unwrap_or(0.0);
    if !raw.is_finite() || raw < 0.0 {
        return 0;
    }
    (raw.round() as usize).min(n.saturating_sub(1))
}

/// Static description of a safe MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmdpSpec {
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub gamma: f64,
    pub gamma_safe: f64,
    /// Task episode horizon in steps.
    pub horizon: usize,
    pub initial_distribution: String,
}

impl SmdpSpec {
    pub fn action_dim(&self) -> usize {
        self.action_space.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::InvalidArgument("state_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        // gamma_safe = 1 reads Q_c as a failure probability.
        if !(0.0..=1.0).contains(&self.gamma_safe) {
            return Err(Error::InvalidArgument(format!(
                "gamma_safe {} not in [0, 1]",
                self.gamma_safe
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        match &self.action_space {
            ActionSpace::Continuous { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err(Error::InvalidArgument("action bounds have mismatched lengths".into()));
                }
                if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                    return Err(Error::InvalidArgument("action_low must be < action_high".into()));
                }
            }
            ActionSpace::Discrete { n } => {
                if *n == 0 {
                    return Err(Error::InvalidArgument("discrete action space is empty".into()));
                }
            }
        }
        Ok(())
    }
}

/// Partition label of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateLabel {
    Safe,
    DeadEnd,
    Fail,
}

impl StateLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StateLabel::Safe => "safe",
            StateLabel::DeadEnd => "dead_end",
            StateLabel::Fail => "fail",
        }
    }
}

/// Cost of entering a state: 1 iff the state is a failure state.
pub fn cost_indicator(next_state_label: StateLabel) -> u8 {
    u8::from(next_state_label == StateLabel::Fail)
}

/// Behaviour-correction admissibility test `q < epsilon` (ties are unsafe).
pub fn is_action_admissible(q_value: f64, epsilon_safe: f64) -> Result<bool> {
    if !q_value.is_finite() {
        return Err(Error::CriticDivergence(q_value));
    }
    if !(epsilon_safe > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon_safe must be positive, got {epsilon_safe}"
        )));
    }
    Ok(q_value < epsilon_safe)
}

/// One environment step.
///
/// `proposed_action` is what the task policy emitted; `executed_action` is what the
/// environment actually received after behaviour correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub proposed_action: Vec<f64>,
    pub executed_action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: u8,
    pub done: bool,
    pub corrected: bool,
}

impl Transition {
    /// Checks the record-level contract: binary cost, and cost implies termination.
    pub fn validate(&self) -> Result<()> {
        if self.cost > 1 {
            return Err(Error::InvalidArgument(format!("cost {} is not binary", self.cost)));
        }
        if self.cost == 1 && !self.done {
            return Err(Error::InvalidArgument("cost = 1 transition must be terminal".into()));
        }
        if self.proposed_action.len() != self.executed_action.len() {
            return Err(Error::ShapeMismatch {
                expected: self.proposed_action.len(),
                got: self.executed_action.len(),
            });
        }
        if self.state.len() != self.next_state.len() {
            return Err(Error::ShapeMismatch {
                expected: self.state.len(),
                got: self.next_state.len(),
            });
        }
        Ok(())
    }
}

/// Checks that at most one transition of an episode has cost 1 and that it is the last.
pub fn validate_episode(episode: &[Transition]) -> Result<()> {
    for (i, t) in episode.iter().enumerate() {
        t.validate()?;
        if t.cost == 1 && i + 1 != episode.len() {
            return Err(Error::InvalidArgument(format!(
                "violation at step {i} is not the last transition of its episode"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_is_one_only_on_failure() {
        assert_eq!(cost_indicator(StateLabel::Fail), 1);
        assert_eq!(cost_indicator(StateLabel::Safe), 0);
        assert_eq!(cost_indicator(StateLabel::DeadEnd), 0);
    }

    #[test]
    fn admissibility_is_strict() {
        assert!(is_action_admissible(0.1, 0.7).unwrap());
        assert!(!is_action_admissible(0.7, 0.7).unwrap());
        assert!(is_action_admissible(0.0, 1e-9).unwrap());
        assert!(matches!(is_action_admissible(f64::NAN, 0.7), Err(Error::CriticDivergence(_))));
        assert!(is_action_admissible(0.1, 0.0).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = SmdpSpec {
            state_dim: 2,
            action_space: ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] },
            gamma: 0.99,
            gamma_safe: 1.0,
            horizon: 10,
            initial_distribution: "fixed".into(),
        };
        spec.validate().unwrap();
        spec.gamma = 1.0;
        assert!(spec.validate().is_err());
        spec.gamma = 0.9;
        spec.action_space = ActionSpace::Continuous { low: vec![1.0], high: vec![1.0] };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn episode_violation_must_be_last() {
        let step = |cost: u8, done: bool| Transition {
            state: vec![0.0],
            proposed_action: vec![0.0],
            executed_action: vec![0.0],
            next_state: vec![0.0],
            reward: 0.0,
            cost,
            done,
            corrected: false,
        };
        validate_episode(&[step(0, false), step(1, true)]).unwrap();
        assert!(validate_episode(&[step(1, true), step(0, false)]).is_err());
        assert!(step(1, false).validate().is_err());
        assert!(step(2, true).validate().is_err());
    }

    #[test]
    fn discrete_clamp_rounds() {
        let space = ActionSpace::Discrete { n: 4 };
        assert_eq!(space.clamp(&[2.6]), vec![3.0]);
        assert_eq!(space.clamp(&[9.0]), vec![3.0]);
        assert_eq!(space.clamp(&[-1.0]), vec![0.0]);
    }
}
