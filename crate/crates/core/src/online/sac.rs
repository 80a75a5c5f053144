//! Soft actor-critic for the continuous-action task policy.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::replay::StoredTransition;
use crate::funcapprox::{Activation, Adam, AdamConfig, FeatureMap, GaussianPolicy, Mlp, MlpArch, OutputActivation};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_alpha: f64,
    pub initial_alpha: f64,
    /// Tune the temperature towards an entropy of `-action_dim`; otherwise keep it fixed.
    pub auto_alpha: bool,
    pub target_rate: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Uniform random actions, and no updates, for this many initial steps.
    pub warmup_steps: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Relu,
            lr_actor: 3e-4,
            lr_critic: 3e-4,
            lr_alpha: 3e-4,
            initial_alpha: 0.2,
            auto_alpha: true,
            target_rate: 0.005,
            batch_size: 64,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
        }
    }
}

/// Losses and diagnostics of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacLosses {
    pub critic: f64,
    pub actor: f64,
    pub alpha: f64,
    /// Mean of `r + gamma (1 - done) min Q_target(s', a')`, excluding the entropy bonus.
    pub q_target_mean: f64,
    /// Mean of `-gamma (1 - done) alpha log pi(a'|s')`.
    pub entropy_bonus_mean: f64,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub actor: GaussianPolicy,
    pub critics: [Mlp; 2],
    pub targets: [Mlp; 2],
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub gamma: f64,
    pub cfg: SacConfig,
    actor_opt: Adam,
    critic_opts: [Adam; 2],
    alpha_opt: Adam,
}

impl SacAgent {
    pub fn new<R: Rng>(features: FeatureMap, low: Vec<f64>, high: Vec<f64>, gamma: f64, cfg: SacConfig, rng: &mut R) -> Result<Self> {
        if !(cfg.initial_alpha > 0.0) {
            return Err(Error::InvalidArgument("initial temperature must be positive".into()));
        }
        if low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidArgument("empty action box".into()));
        }
        let adim = low.len();
        let arch = MlpArch::new(features.dim() + adim, &cfg.hidden, 1, cfg.activation, OutputActivation::Identity);
        let q1 = Mlp::init(arch.clone(), rng);
        let q2 = Mlp::init(arch, rng);
        let actor = GaussianPolicy::new(features, low, high, &cfg.hidden, cfg.activation, rng);
        let actor_opt = Adam::new(AdamConfig::with_lr(cfg.lr_actor), actor.net.params().len());
        let critic_opts = [
            Adam::new(AdamConfig::with_lr(cfg.lr_critic), q1.params().len()),
            Adam::new(AdamConfig::with_lr(cfg.lr_critic), q2.params().len()),
        ];
        Ok(Self {
            actor,
            targets: [q1.clone(), q2.clone()],
            critics: [q1, q2],
            log_alpha: cfg.initial_alpha.ln(),
            target_entropy: -(adim as f64),
            gamma,
            actor_opt,
            critic_opts,
            alpha_opt: Adam::new(AdamConfig::with_lr(cfg.lr_alpha), 1),
            cfg,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    fn q_input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.actor.features.apply(state)?;
        let h = &self.actor.head;
        for ((a, l), u) in action.iter().zip(&h.low).zip(&h.high) {
            x.push((a.clamp(*l, *u) - 0.5 * (l + u)) * 2.0 / (u - l));
        }
        Ok(x)
    }

    /// `min(Q1, Q2)` of the online critics.
    pub fn q_value(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let x = self.q_input(state, action)?;
        Ok(self.critics[0].forward(&x)?[0].min(self.critics[1].forward(&x)?[0]))
    }

    pub fn act<R: Rng>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.actor.sample_action(state, deterministic, rng)?.0)
    }

    /// Uniform action in the box.
    pub fn random_action<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let h = &self.actor.head;
        h.low.iter().zip(&h.high).map(|(l, u)| rng.random_range(*l..*u)).collect()
    }

    pub fn update<R: Rng>(&mut self, batch: &[&StoredTransition], rng: &mut R) -> Result<SacLosses> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let n = batch.len() as f64;
        let alpha = self.alpha();

        let mut targets = Vec::with_capacity(batch.len());
        let (mut tq_sum, mut ent_sum) = (0.0, 0.0);
        for t in batch {
            let (tq, ent) = if t.done {
                (t.reward, 0.0)
            } else {
                let (a2, lp2) = self.actor.sample_action(&t.next_state, false, rng)?;
                let x2 = self.q_input(&t.next_state, &a2)?;
                let qmin = self.targets[0].forward(&x2)?[0].min(self.targets[1].forward(&x2)?[0]);
                (t.reward + self.gamma * qmin, -self.gamma * alpha * lp2)
            };
            tq_sum += tq;
            ent_sum += ent;
            targets.push(tq + ent);
        }

        let mut critic_loss = 0.0;
        for k in 0..2 {
            let mut grad = self.critics[k].zero_grad();
            for (t, y) in batch.iter().zip(&targets) {
                let tape = self.critics[k].forward_tape(&self.q_input(&t.state, &t.action)?)?;
                let err = tape.output()[0] - y;
                critic_loss += err * err / n;
                self.critics[k].backward_params(&tape, &[2.0 * err / n], &mut grad)?;
            }
            self.critic_opts[k].step(self.critics[k].params_mut(), &grad)?;
        }
        critic_loss *= 0.5;

        let adim = self.actor.action_dim();
        let fdim = self.actor.features.dim();
        let mut grad = self.actor.net.zero_grad();
        let (mut actor_loss, mut lp_sum) = (0.0, 0.0);
        for t in batch {
            let noise: Vec<f64> = (0..adim).map(|_| rng.sample(StandardNormal)).collect();
            let (tape, sample) = self.actor.forward_sample(&t.state, &noise)?;
            let x = self.q_input(&t.state, &sample.action)?;
            let tapes = [self.critics[0].forward_tape(&x)?, self.critics[1].forward_tape(&x)?];
            let k = if tapes[0].output()[0] <= tapes[1].output()[0] { 0 } else { 1 };
            let q = tapes[k].output()[0];
            let mut scratch = self.critics[k].zero_grad();
            let dx = self.critics[k].backward(&tapes[k], &[1.0], &mut scratch)?;
            let h = &self.actor.head;
            let d_action: Vec<f64> = (0..adim).map(|i| -dx[fdim + i] * 2.0 / (h.high[i] - h.low[i]) / n).collect();
            self.actor.backward(&tape, &sample, &d_action, alpha / n, &mut grad)?;
            actor_loss += (alpha * sample.log_prob - q) / n;
            lp_sum += sample.log_prob;
        }
        self.actor_opt.step(self.actor.net.params_mut(), &grad)?;

        let mean_lp = lp_sum / n;
        let alpha_loss = -self.log_alpha * (mean_lp + self.target_entropy);
        if self.cfg.auto_alpha {
            let mut la = [self.log_alpha];
            self.alpha_opt.step(&mut la, &[-(mean_lp + self.target_entropy)])?;
            self.log_alpha = la[0].clamp(-20.0, 5.0);
        }

        for k in 0..2 {
            self.targets[k].soft_update_from(&self.critics[k], self.cfg.target_rate);
        }
        let out = SacLosses {
            critic: critic_loss,
            actor: actor_loss,
            alpha: alpha_loss,
            q_target_mean: tq_sum / n,
            entropy_bonus_mean: ent_sum / n,
        };
        if !(out.critic.is_finite() && out.actor.is_finite()) {
            return Err(Error::NonFinite("SAC loss"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit_agent(cfg: SacConfig, seed: u64) -> (SacAgent, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::new(FeatureMap::identity(1), vec![-1.0], vec![1.0], 0.0, cfg, &mut rng).unwrap();
        (agent, rng)
    }

    #[test]
    fn bandit_mean_moves_to_reward_peak() {
        let cfg = SacConfig { hidden: vec![32], lr_actor: 3e-3, lr_critic: 3e-3, initial_alpha: 0.001, auto_alpha: false, ..Default::default() };
        let (mut agent, mut rng) = bandit_agent(cfg, 1);
        let mut data = Vec::new();
        for _ in 0..400 {
            let a = agent.random_action(&mut rng);
            let r = -(a[0] - 0.5) * (a[0] - 0.5);
            data.push(StoredTransition { state: vec![0.0], action: a, reward: r, next_state: vec![0.0], done: true });
        }
        for _ in 0..3000 {
            let batch: Vec<&StoredTransition> = (0..32).map(|_| &data[rng.random_range(0..data.len())]).collect();
            agent.update(&batch, &mut rng).unwrap();
        }
        let mean = agent.actor.mean_action(&[0.0]).unwrap()[0];
        assert!((mean - 0.5).abs() < 0.05, "mean action {mean}");
    }

    #[test]
    fn zero_reward_critics_approach_zero_without_entropy() {
        let cfg = SacConfig { hidden: vec![8], lr_critic: 3e-3, initial_alpha: 1e-9, auto_alpha: false, target_rate: 0.05, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agent = SacAgent::new(FeatureMap::identity(1), vec![-1.0], vec![1.0], 0.9, cfg, &mut rng).unwrap();
        let data: Vec<StoredTransition> = (0..64)
            .map(|i| {
                let a = vec![(i as f64 / 32.0) - 1.0];
                StoredTransition { state: vec![0.0], action: a, reward: 0.0, next_state: vec![0.0], done: false }
            })
            .collect();
        let mut last = None;
        for _ in 0..3000 {
            let batch: Vec<&StoredTransition> = data.iter().collect();
            last = Some(agent.update(&batch, &mut rng).unwrap());
        }
        let l = last.unwrap();
        assert!(l.q_target_mean.abs() < 0.02, "{l:?}");
        assert!(l.entropy_bonus_mean.abs() < 1e-6);
        assert!(agent.q_value(&[0.0], &[0.3]).unwrap().abs() < 0.05);
    }

    #[test]
    fn temperature_tracks_entropy_target() {
        let cfg = SacConfig { hidden: vec![8], lr_alpha: 1e-2, ..Default::default() };
        let (mut agent, mut rng) = bandit_agent(cfg, 3);
        let data = [StoredTransition { state: vec![0.0], action: vec![0.0], reward: 0.0, next_state: vec![0.0], done: true }];
        let before = agent.alpha();
        // A freshly initialised policy is far more entropic than -1 nat, so alpha shrinks.
        for _ in 0..50 {
            agent.update(&[&data[0]], &mut rng).unwrap();
        }
        assert!(agent.alpha() < before);
    }

    #[test]
    fn updates_are_seed_reproducible() {
        let run = || {
            let (mut agent, mut rng) = bandit_agent(SacConfig { hidden: vec![4], ..Default::default() }, 9);
            let t = StoredTransition { state: vec![0.1], action: vec![0.2], reward: 1.0, next_state: vec![0.3], done: false };
            for _ in 0..5 {
                agent.update(&[&t, &t], &mut rng).unwrap();
            }
            agent.actor.net.params().to_vec()
        };
        assert_eq!(run(), run());
    }
}
