//! Safety critic: action-cost network `Q_c`, state-cost network `V_c` and a delayed
//! copy of `Q_c`, all with outputs in `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::funcapprox::{Activation, Adam, FeatureMap, Mlp, MlpArch, OutputActivation};
use crate::smdp::{discrete_index, ActionSpace, Transition};
use crate::{Error, Result};

/// Hidden layout of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { hidden: vec![64, 64], activation: Activation::Tanh }
    }
}

/// Asymmetric squared loss `|tau - 1(u < 0)| * u^2`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    expectile_weight(u, tau) * u * u
}

fn expectile_weight(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        1.0 - tau
    } else {
        tau
    }
}

/// What a critic needs to know about the environment it judges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSetup {
    pub action_space: ActionSpace,
    pub features: FeatureMap,
    pub gamma_safe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyCritic {
    pub setup: CriticSetup,
    pub q_net: Mlp,
    pub target_q: Mlp,
    pub v_net: Mlp,
    /// Expectile applied to negated costs: values near 1 track the cheapest dataset action.
    pub tau: f64,
    /// Polyak rate of the delayed `Q_c` copy.
    pub target_rate: f64,
}

fn finite(q: f64) -> Result<f64> {
    if q.is_finite() {
        Ok(q)
    } else {
        Err(Error::CriticDivergence(q))
    }
}

impl SafetyCritic {
    pub fn new<R: Rng>(setup: CriticSetup, net: &NetConfig, tau: f64, target_rate: f64, rng: &mut R) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("expectile tau {tau} outside (0, 1)")));
        }
        if !(target_rate > 0.0 && target_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!("target rate {target_rate} outside (0, 1]")));
        }
        let f = setup.features.dim();
        let (q_in, q_out) = match &setup.action_space {
            ActionSpace::Discrete { n } => (f, *n),
            ActionSpace::Continuous { low, .. } => (f + low.len(), 1),
        };
        let q_arch = MlpArch::new(q_in, &net.hidden, q_out, net.activation, OutputActivation::Logistic);
        let v_arch = MlpArch::new(f, &net.hidden, 1, net.activation, OutputActivation::Logistic);
        let q_net = Mlp::init(q_arch, rng);
        let v_net = Mlp::init(v_arch, rng);
        Ok(Self { setup, target_q: q_net.clone(), q_net, v_net, tau, target_rate })
    }

    pub fn gamma_safe(&self) -> f64 {
        self.setup.gamma_safe
    }

    pub fn is_discrete(&self) -> bool {
        self.setup.action_space.is_discrete()
    }

    /// Network input and output index for `Q_c(state, action)`.
    fn q_input(&self, state: &[f64], action: &[f64]) -> Result<(Vec<f64>, usize)> {
        let mut x = self.setup.features.apply(state)?;
        match &self.setup.action_space {
            ActionSpace::Discrete { n } => Ok((x, discrete_index(action, *n))),
            ActionSpace::Continuous { low, high } => {
                if action.len() != low.len() {
                    return Err(Error::ShapeMismatch { expected: low.len(), got: action.len() });
                }
                for ((a, l), h) in action.iter().zip(low).zip(high) {
                    x.push((a.clamp(*l, *h) - 0.5 * (l + h)) * 2.0 / (h - l));
                }
                Ok((x, 0))
            }
        }
    }

    pub fn q(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (x, i) = self.q_input(state, action)?;
        finite(self.q_net.forward(&x)?[i])
    }

    pub fn q_target(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let (x, i) = self.q_input(state, action)?;
        finite(self.target_q.forward(&x)?[i])
    }

    /// `Q_c(state, a)` for every discrete action.
    pub fn q_all(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.q_all_from(&self.q_net, state)
    }

    pub fn q_target_all(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.q_all_from(&self.target_q, state)
    }

    fn q_all_from(&self, net: &Mlp, state: &[f64]) -> Result<Vec<f64>> {
        if !self.is_discrete() {
            return Err(Error::InvalidArgument("per-action values need a discrete action set".into()));
        }
        let out = net.forward(&self.setup.features.apply(state)?)?;
        for q in &out {
            finite(*q)?;
        }
        Ok(out)
    }

    pub fn v(&self, state: &[f64]) -> Result<f64> {
        finite(self.v_net.forward(&self.setup.features.apply(state)?)?[0])
    }

    /// `Q_c(state, action)` and its gradient with respect to the raw action.
    pub fn q_with_action_grad(&self, state: &[f64], action: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ActionSpace::Continuous { low, high } = &self.setup.action_space else {
            return Err(Error::InvalidArgument("action gradients need a continuous action set".into()));
        };
        let (x, _) = self.q_input(state, action)?;
        let tape = self.q_net.forward_tape(&x)?;
        let q = finite(tape.output()[0])?;
        let mut scratch = self.q_net.zero_grad();
        let dx = self.q_net.backward(&tape, &[1.0], &mut scratch)?;
        let f = self.setup.features.dim();
        let grad = dx[f..].iter().zip(low.iter().zip(high)).map(|(g, (l, h))| g * 2.0 / (h - l)).collect();
        Ok((q, grad))
    }

    /// One squared-error step of `Q_c(s, a_data)` towards `targets`.
    pub fn fit_q(&mut self, opt: &mut Adam, batch: &[&Transition], targets: &[f64]) -> Result<f64> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad = self.q_net.zero_grad();
        let mut loss = 0.0;
        for (t, &y) in batch.iter().zip(targets) {
            let (x, i) = self.q_input(&t.state, &t.executed_action)?;
            let tape = self.q_net.forward_tape(&x)?;
            let err = tape.output()[i] - y;
            loss += err * err * scale;
            let mut up = vec![0.0; self.q_net.output_dim()];
            up[i] = 2.0 * err * scale;
            self.q_net.backward_params(&tape, &up, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("Q_c loss"));
        }
        opt.step(self.q_net.params_mut(), &grad)?;
        Ok(loss)
    }

    /// Masked bootstrap target `c + (1 - done) * gamma_safe * V_c(s')`.
    pub fn q_target_value(&self, t: &Transition) -> Result<f64> {
        if t.done {
            return Ok(f64::from(t.cost));
        }
        Ok(f64::from(t.cost) + self.gamma_safe() * self.v(&t.next_state)?)
    }

    /// Regresses `Q_c` on dataset actions towards the `V_c`-bootstrapped target.
    pub fn update_q(&mut self, opt: &mut Adam, batch: &[&Transition]) -> Result<f64> {
        let targets = batch.iter().map(|t| self.q_target_value(t)).collect::<Result<Vec<_>>>()?;
        self.fit_q(opt, batch, &targets)
    }

    /// Expectile regression of `V_c(s)` onto the delayed `Q_c(s, a_data)`.
    pub fn update_v(&mut self, opt: &mut Adam, batch: &[&Transition]) -> Result<f64> {
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut grad = self.v_net.zero_grad();
        let mut loss = 0.0;
        for t in batch {
            let q = self.q_target(&t.state, &t.executed_action)?;
            let tape = self.v_net.forward_tape(&self.setup.features.apply(&t.state)?)?;
            let u = tape.output()[0] - q;
            loss += expectile_loss(u, self.tau) * scale;
            let up = [2.0 * expectile_weight(u, self.tau) * u * scale];
            self.v_net.backward_params(&tape, &up, &mut grad)?;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("V_c loss"));
        }
        opt.step(self.v_net.params_mut(), &grad)?;
        Ok(loss)
    }

    pub fn soft_update_target(&mut self) {
        let rate = self.target_rate;
        self.target_q.soft_update_from(&self.q_net, rate);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcapprox::AdamConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expectile_closed_forms() {
        assert_eq!(expectile_loss(2.0, 0.5), 2.0);
        assert!((expectile_loss(-1.0, 0.9) - 0.1).abs() < 1e-15);
        assert_eq!(expectile_loss(0.0, 0.3), 0.0);
        assert!(expectile_loss(-3.0, 0.2) >= 0.0);
    }

    fn table_critic(tau: f64) -> SafetyCritic {
        let setup = CriticSetup {
            action_space: ActionSpace::Discrete { n: 2 },
            features: FeatureMap::IndexOneHot { n: 2 },
            gamma_safe: 0.9,
        };
        let net = NetConfig { hidden: vec![], activation: Activation::Tanh };
        SafetyCritic::new(setup, &net, tau, 0.5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    fn tr(s: usize, a: usize, s2: usize, cost: u8) -> Transition {
        Transition {
            state: vec![s as f64],
            proposed_action: vec![a as f64],
            executed_action: vec![a as f64],
            next_state: vec![s2 as f64],
            reward: 0.0,
            cost,
            done: cost == 1,
            corrected: false,
        }
    }

    #[test]
    fn violation_target_is_one_and_safe_terminal_zero() {
        let c = table_critic(0.9);
        assert_eq!(c.q_target_value(&tr(0, 1, 1, 1)).unwrap(), 1.0);
        let mut goal = tr(0, 0, 1, 0);
        goal.done = true;
        assert_eq!(c.q_target_value(&goal).unwrap(), 0.0);
    }

    /// Converged `V` on a state whose two dataset actions cost 0 and 1.
    fn converged_v(tau: f64) -> f64 {
        let mut c = table_critic(tau);
        let data = [tr(0, 0, 0, 0), tr(0, 1, 1, 1)];
        // pin Q to the two-point distribution {0, 1} and fit V alone
        c.q_net.params_mut().copy_from_slice(&[0.0, 0.0, 0.0, 0.0, -30.0, 30.0]);
        c.target_q = c.q_net.clone();
        let mut opt = Adam::new(AdamConfig::with_lr(0.02), c.v_net.params().len());
        let batch: Vec<&Transition> = data.iter().collect();
        for _ in 0..6000 {
            c.update_v(&mut opt, &batch).unwrap();
        }
        c.v(&[0.0]).unwrap()
    }

    #[test]
    fn expectile_of_two_point_costs() {
        // stationary point of tau * v = (1 - tau) * (1 - v)
        for tau in [0.1, 0.5, 0.9] {
            let v = converged_v(tau);
            assert!((v - (1.0 - tau)).abs() < 1e-3, "tau {tau}: {v}");
        }
        assert!(converged_v(0.9) <= converged_v(0.5));
    }
}
