//! Recovery policies: a squashed Gaussian for continuous actions, a softmax over
//! actions for discrete ones.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::behavior::BehaviorPolicy;
use super::critic::{NetConfig, SafetyCritic};
use crate::funcapprox::{Adam, FeatureMap, GaussianPolicy, Mlp, MlpArch, OutputActivation};
use crate::oracle::argmin;
use crate::smdp::{ActionSpace, Transition};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RecoveryNet {
    Gaussian(GaussianPolicy),
    /// Logits over discrete actions.
    Categorical { net: Mlp, features: FeatureMap },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPolicy {
    pub net: RecoveryNet,
    frozen: bool,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

impl RecoveryPolicy {
    pub fn new<R: Rng>(action_space: &ActionSpace, features: FeatureMap, net: &NetConfig, rng: &mut R) -> Self {
        let net = match action_space {
            ActionSpace::Continuous { low, high } => RecoveryNet::Gaussian(GaussianPolicy::new(
                features,
                low.clone(),
                high.clone(),
                &net.hidden,
                net.activation,
                rng,
            )),
            ActionSpace::Discrete { n } => {
                let arch = MlpArch::new(features.dim(), &net.hidden, *n, net.activation, OutputActivation::Identity);
                RecoveryNet::Categorical { net: Mlp::init(arch, rng), features }
            }
        };
        Self { net, frozen: false }
    }

    pub fn from_net(net: RecoveryNet) -> Self {
        Self { net, frozen: false }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Fixes the parameters for the rest of the run.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn ensure_trainable(&self) -> Result<()> {
        if self.frozen {
            return Err(Error::InvalidArgument("recovery policy is frozen".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> &[f64] {
        match &self.net {
            RecoveryNet::Gaussian(p) => p.net.params(),
            RecoveryNet::Categorical { net, .. } => net.params(),
        }
    }

    /// Action probabilities of a discrete recovery policy.
    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        match &self.net {
            RecoveryNet::Categorical { net, features } => Ok(softmax(&net.forward(&features.apply(state)?)?)),
            RecoveryNet::Gaussian(_) => Err(Error::InvalidArgument("continuous policy has no probability table".into())),
        }
    }

    /// The deterministic action used when the shield fires: the squashed mean, or the
    /// most probable discrete action.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        match &self.net {
            RecoveryNet::Gaussian(p) => p.mean_action(state),
            RecoveryNet::Categorical { .. } => {
                let p = self.probabilities(state)?;
                let neg: Vec<f64> = p.iter().map(|x| -x).collect();
                Ok(vec![argmin(&neg) as f64])
            }
        }
    }

    /// Descends `E_{a ~ pi}[Q_c(s, a)]` over the batch states, holding the critic fixed.
    ///
    /// Continuous actions use the reparameterised (pathwise) gradient through `Q_c`;
    /// discrete actions use the exact expected gradient `pi_a * (Q_a - sum_b pi_b Q_b)`.
    /// Returns the objective `-E[Q_c]`.
    pub fn update_pathwise(
        &mut self,
        critic: &SafetyCritic,
        opt: &mut Adam,
        states: &[&[f64]],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        self.ensure_trainable()?;
        let scale = 1.0 / states.len().max(1) as f64;
        let mut objective = 0.0;
        match &mut self.net {
            RecoveryNet::Gaussian(policy) => {
                let mut grad = policy.net.zero_grad();
                for s in states {
                    let noise: Vec<f64> = (0..policy.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
                    let (tape, sample) = policy.forward_sample(s, &noise)?;
                    let (q, dq) = critic.q_with_action_grad(s, &sample.action)?;
                    objective -= q * scale;
                    let d_action: Vec<f64> = dq.iter().map(|g| g * scale).collect();
                    policy.backward(&tape, &sample, &d_action, 0.0, &mut grad)?;
                }
                opt.step(policy.net.params_mut(), &grad)?;
            }
            RecoveryNet::Categorical { net, features } => {
                let mut grad = net.zero_grad();
                for s in states {
                    let q = critic.q_all(s)?;
                    let tape = net.forward_tape(&features.apply(s)?)?;
                    let p = softmax(tape.output());
                    let mean_q: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
                    objective -= mean_q * scale;
                    let up: Vec<f64> = p.iter().zip(&q).map(|(pa, qa)| pa * (qa - mean_q) * scale).collect();
                    net.backward_params(&tape, &up, &mut grad)?;
                }
                opt.step(net.params_mut(), &grad)?;
            }
        }
        if !objective.is_finite() {
            return Err(Error::NonFinite("recovery objective"));
        }
        Ok(objective)
    }

    /// Advantage-weighted regression onto dataset actions, weights
    /// `min(exp(beta * (V_c(s) - Q_c(s, a))), max_weight)`. Returns the weighted
    /// negative log-likelihood.
    pub fn update_awr(
        &mut self,
        critic: &SafetyCritic,
        opt: &mut Adam,
        batch: &[&Transition],
        beta: f64,
        max_weight: f64,
    ) -> Result<f64> {
        self.ensure_trainable()?;
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut loss = 0.0;
        let weights = batch
            .iter()
            .map(|t| {
                let adv = critic.v(&t.state)? - critic.q_target(&t.state, &t.executed_action)?;
                Ok((beta * adv).exp().min(max_weight))
            })
            .collect::<Result<Vec<f64>>>()?;
        match &mut self.net {
            RecoveryNet::Gaussian(policy) => {
                let mut grad = policy.net.zero_grad();
                for (t, w) in batch.iter().zip(&weights) {
                    let (tape, lp, g) = policy.log_prob_tape(&t.state, &t.executed_action)?;
                    loss -= w * lp * scale;
                    let up: Vec<f64> = g.iter().map(|x| -w * x * scale).collect();
                    policy.net.backward_params(&tape, &up, &mut grad)?;
                }
                opt.step(policy.net.params_mut(), &grad)?;
            }
            RecoveryNet::Categorical { net, features } => {
                let mut grad = net.zero_grad();
                for (t, w) in batch.iter().zip(&weights) {
                    let tape = net.forward_tape(&features.apply(&t.state)?)?;
                    let p = softmax(tape.output());
                    let a = crate::smdp::discrete_index(&t.executed_action, p.len());
                    loss -= w * p[a].max(1e-300).ln() * scale;
                    let up: Vec<f64> =
                        p.iter().enumerate().map(|(b, pb)| w * (pb - f64::from(u8::from(a == b))) * scale).collect();
                    net.backward_params(&tape, &up, &mut grad)?;
                }
                opt.step(net.params_mut(), &grad)?;
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("recovery regression loss"));
        }
        Ok(loss)
    }
}

impl BehaviorPolicy for RecoveryPolicy {
    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        match &self.net {
            RecoveryNet::Gaussian(p) => Ok(p.sample_action(state, false, rng)?.0),
            RecoveryNet::Categorical { .. } => {
                let p = self.probabilities(state)?;
                let mut x: f64 = rng.random();
                for (a, pa) in p.iter().enumerate() {
                    x -= pa;
                    if x < 0.0 {
                        return Ok(vec![a as f64]);
                    }
                }
                Ok(vec![(p.len() - 1) as f64])
            }
        }
    }

    fn probabilities(&self, state: &[f64]) -> Result<Option<Vec<f64>>> {
        match &self.net {
            RecoveryNet::Gaussian(_) => Ok(None),
            RecoveryNet::Categorical { .. } => Ok(Some(RecoveryPolicy::probabilities(self, state)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::{Activation, AdamConfig};
    use crate::pretrain::critic::CriticSetup;
    use rand::SeedableRng;

    fn continuous_setup() -> CriticSetup {
        CriticSetup {
            action_space: ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] },
            features: FeatureMap::identity(1),
            gamma_safe: 0.9,
        }
    }

    #[test]
    fn constant_critic_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = NetConfig { hidden: vec![8], activation: Activation::Tanh };
        let mut critic = SafetyCritic::new(continuous_setup(), &net, 0.9, 0.01, &mut rng).unwrap();
        for p in critic.q_net.params_mut() {
            *p = 0.0;
        }
        let mut pol = RecoveryPolicy::new(&critic.setup.action_space, FeatureMap::identity(1), &net, &mut rng);
        let before = pol.params().to_vec();
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), before.len());
        let s = [0.3];
        pol.update_pathwise(&critic, &mut opt, &[&s], &mut rng).unwrap();
        assert_eq!(pol.params(), &before[..]);

        let disc = CriticSetup {
            action_space: ActionSpace::Discrete { n: 3 },
            features: FeatureMap::IndexOneHot { n: 2 },
            gamma_safe: 0.9,
        };
        let mut critic = SafetyCritic::new(disc.clone(), &net, 0.9, 0.01, &mut rng).unwrap();
        for p in critic.q_net.params_mut() {
            *p = 0.0;
        }
        let mut pol = RecoveryPolicy::new(&disc.action_space, disc.features.clone(), &net, &mut rng);
        let before = pol.params().to_vec();
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), before.len());
        pol.update_pathwise(&critic, &mut opt, &[&[1.0]], &mut rng).unwrap();
        // the advantage is zero up to rounding of the probability-weighted mean
        let moved = pol.params().iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(moved < 1e-9, "{moved}");
    }

    #[test]
    fn frozen_policy_refuses_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = NetConfig { hidden: vec![], activation: Activation::Tanh };
        let critic = SafetyCritic::new(continuous_setup(), &net, 0.9, 0.01, &mut rng).unwrap();
        let mut pol = RecoveryPolicy::new(&critic.setup.action_space, FeatureMap::identity(1), &net, &mut rng);
        pol.freeze();
        let mut opt = Adam::new(AdamConfig::default(), pol.params().len());
        assert!(pol.update_pathwise(&critic, &mut opt, &[&[0.0]], &mut rng).is_err());
    }

    #[test]
    fn pathwise_moves_towards_cheaper_actions() {
        // Q_c increasing in the action: the policy mean must move down
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lin = NetConfig { hidden: vec![], activation: Activation::Tanh };
        let mut critic = SafetyCritic::new(continuous_setup(), &lin, 0.9, 0.01, &mut rng).unwrap();
        critic.q_net.params_mut().copy_from_slice(&[0.0, 3.0, 0.0]);
        let mut pol = RecoveryPolicy::new(&critic.setup.action_space, FeatureMap::identity(1), &lin, &mut rng);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), pol.params().len());
        let s = [0.0];
        for _ in 0..500 {
            pol.update_pathwise(&critic, &mut opt, &[&s], &mut rng).unwrap();
        }
        assert!(pol.mean_action(&s).unwrap()[0] < -0.9);
    }
}
