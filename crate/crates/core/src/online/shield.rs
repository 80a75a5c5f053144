//! Behaviour correction: replace task actions whose cost value reaches the threshold.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::envs::TabularModel;
use crate::oracle::{argmin, ExactValues};
use crate::pretrain::{Pretrained, RecoveryPolicy, SafetyCritic};
use crate::smdp::is_action_admissible;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum ShieldKind {
    /// Pretrained critic and frozen recovery policy.
    Learned { critic: SafetyCritic, recovery: RecoveryPolicy },
    /// Exact `Q*` of a tabular model.
    Oracle { model: TabularModel, values: ExactValues },
}

/// Immutable after construction: there is no method that hands out mutable access.
#[derive(Debug, Clone)]
pub struct Shield {
    kind: ShieldKind,
    epsilon: f64,
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold {epsilon} must be positive")));
    }
    Ok(())
}

impl Shield {
    pub fn learned(critic: SafetyCritic, mut recovery: RecoveryPolicy, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        recovery.freeze();
        Ok(Self { kind: ShieldKind::Learned { critic, recovery }, epsilon })
    }

    pub fn from_pretrained(p: &Pretrained, epsilon: f64) -> Result<Self> {
        Self::learned(p.critic.clone(), p.recovery.clone(), epsilon)
    }

    pub fn oracle(model: TabularModel, values: ExactValues, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { kind: ShieldKind::Oracle { model, values }, epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kind(&self) -> &ShieldKind {
        &self.kind
    }

    /// The same critic and recovery with another threshold.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        Ok(Self { kind: self.kind.clone(), epsilon })
    }

    pub fn cost_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        match &self.kind {
            ShieldKind::Learned { critic, .. } => critic.q(state, action),
            ShieldKind::Oracle { model, values } => {
                Ok(values.q(model.state_index(state), model.action_index(action)))
            }
        }
    }

    /// The deterministic corrective action: the recovery mean for continuous actions,
    /// the cheapest action under the critic for discrete ones.
    pub fn recovery_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        match &self.kind {
            ShieldKind::Learned { critic, recovery } => {
                if critic.is_discrete() {
                    Ok(vec![argmin(&critic.q_all(state)?) as f64])
                } else {
                    recovery.mean_action(state)
                }
            }
            ShieldKind::Oracle { model, values } => {
                Ok(model.action_value(values.argmin_action(model.state_index(state))))
            }
        }
    }

    /// Returns the action to execute and whether the task action was replaced.
    pub fn behavior_correct(&self, state: &[f64], task_action: &[f64]) -> Result<(Vec<f64>, bool)> {
        let q = self.cost_value(state, task_action)?;
        if is_action_admissible(q, self.epsilon)? {
            Ok((task_action.to_vec(), false))
        } else {
            Ok((self.recovery_action(state)?, true))
        }
    }

    /// Hash of every parameter the shield decides with.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.epsilon.to_bits().hash(&mut h);
        let mut feed = |xs: &[f64]| xs.iter().for_each(|x| x.to_bits().hash(&mut h));
        match &self.kind {
            ShieldKind::Learned { critic, recovery } => {
                feed(critic.q_net.params());
                feed(critic.target_q.params());
                feed(critic.v_net.params());
                feed(recovery.params());
            }
            ShieldKind::Oracle { values, .. } => {
                feed(&values.q_star);
                feed(&values.v_star);
            }
        }
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::StateIndexer;
    use crate::funcapprox::{Activation, FeatureMap};
    use crate::oracle::{value_iteration_optimal, TabularSmdp};
    use crate::pretrain::{CriticSetup, NetConfig};
    use crate::smdp::ActionSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Learned shield over a continuous 1-D action whose `Q_c` is the constant `q`.
    fn constant_shield(q: f64, epsilon: f64) -> Shield {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let setup = CriticSetup {
            action_space: ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] },
            features: FeatureMap::identity(1),
            gamma_safe: 0.9,
        };
        let lin = NetConfig { hidden: vec![], activation: Activation::Tanh };
        let mut critic = SafetyCritic::new(setup.clone(), &lin, 0.9, 0.01, &mut rng).unwrap();
        let logit = (q / (1.0 - q)).ln();
        critic.q_net.params_mut().copy_from_slice(&[0.0, 0.0, logit]);
        let mut recovery = RecoveryPolicy::new(&setup.action_space, setup.features.clone(), &lin, &mut rng);
        if let crate::pretrain::RecoveryNet::Gaussian(p) = &mut recovery.net {
            // mean output 0.5 -> action tanh(0.5)
            p.net.params_mut().copy_from_slice(&[0.0, 0.0, 0.5, -1.0]);
        }
        Shield::learned(critic, recovery, epsilon).unwrap()
    }

    #[test]
    fn admissible_action_passes_through() {
        let s = constant_shield(0.1, 0.7);
        assert_eq!(s.behavior_correct(&[0.0], &[0.9]).unwrap(), (vec![0.9], false));
    }

    #[test]
    fn inadmissible_action_gets_recovery_mean() {
        let s = constant_shield(0.9, 0.7);
        let (a, corrected) = s.behavior_correct(&[0.0], &[0.9]).unwrap();
        assert!(corrected);
        assert!((a[0] - 0.5f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn vacuous_threshold_never_fires() {
        let s = constant_shield(0.999, 1.0);
        assert!(!s.behavior_correct(&[0.3], &[-0.2]).unwrap().1);
    }

    #[test]
    fn oracle_shield_uses_argmin() {
        let smdp = TabularSmdp::three_state_chain();
        let values = value_iteration_optimal(&smdp, 0.9, 1e-12).unwrap();
        let model = TabularModel { smdp, indexer: StateIndexer::Identity };
        let s = Shield::oracle(model, values, 0.9).unwrap();
        assert_eq!(s.behavior_correct(&[0.0], &[1.0]).unwrap(), (vec![0.0], true));
        assert_eq!(s.behavior_correct(&[0.0], &[0.0]).unwrap(), (vec![0.0], false));
        assert!(Shield::oracle(s.clone_model(), s.clone_values(), 0.0).is_err());
    }

    impl Shield {
        fn clone_model(&self) -> TabularModel {
            match &self.kind {
                ShieldKind::Oracle { model, .. } => model.clone(),
                _ => unreachable!(),
            }
        }
        fn clone_values(&self) -> ExactValues {
            match &self.kind {
                ShieldKind::Oracle { values, .. } => values.clone(),
                _ => unreachable!(),
            }
        }
    }
}
