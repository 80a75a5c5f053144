//! Diagonal Gaussian policies squashed into an action box with `tanh`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Activation, FeatureMap, Mlp, MlpArch, OutputActivation, Tape};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LOG_TAU: f64 = 0.918_938_533_204_672_8; // 0.5 * ln(2 pi)

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)`, stable for large `|u|`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Maps `tanh` outputs onto the box `[low, high]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquashedGaussianHead {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

/// Everything a reparameterised sample needs for its backward pass.
#[derive(Debug, Clone)]
pub struct HeadSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    noise: Vec<f64>,
    std: Vec<f64>,
    squashed: Vec<f64>,
    log_std_clamped: Vec<bool>,
}

impl SquashedGaussianHead {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Self {
        Self { low, high }
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    fn half(&self, i: usize) -> f64 {
        0.5 * (self.high[i] - self.low[i])
    }

    fn center(&self, i: usize) -> f64 {
        0.5 * (self.high[i] + self.low[i])
    }

    /// Squashes `mean + exp(log_std) * noise` (unclamped `log_std`).
    pub fn squash(&self, mean: &[f64], log_std: &[f64], noise: &[f64]) -> HeadSample {
        let d = self.dim();
        let mut s = HeadSample {
            action: Vec::with_capacity(d),
            log_prob: 0.0,
            mean: mean.to_vec(),
            noise: noise.to_vec(),
            std: Vec::with_capacity(d),
            squashed: Vec::with_capacity(d),
            log_std_clamped: vec![false; d],
        };
        for i in 0..d {
            let std = log_std[i].exp();
            let u = mean[i] + std * noise[i];
            let t = u.tanh();
            s.action.push((self.center(i) + self.half(i) * t).clamp(self.low[i], self.high[i]));
            s.log_prob += -0.5 * noise[i] * noise[i] - log_std[i] - HALF_LOG_TAU
                - self.half(i).ln()
                - log_one_minus_tanh_sq(u);
            s.std.push(std);
            s.squashed.push(t);
        }
        s
    }

    /// Reparameterised sample from network outputs `[mean, raw log-std]`; `noise = None`
    /// returns the squashed mean.
    pub fn sample_from_output(&self, output: &[f64], noise: Option<&[f64]>) -> HeadSample {
        let d = self.dim();
        let mean = &output[..d];
        let raw = &output[d..2 * d];
        let log_std: Vec<f64> = raw.iter().map(|r| r.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
        let zeros = vec![0.0; d];
        let mut s = self.squash(mean, &log_std, noise.unwrap_or(&zeros));
        s.log_std_clamped = raw.iter().map(|r| *r < LOG_STD_MIN || *r > LOG_STD_MAX).collect();
        s
    }

    /// Log-density of an in-box action under `(mean, log_std)`.
    pub fn log_prob(&self, mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| {
                let t = ((action[i] - self.center(i)) / self.half(i)).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
                let u = t.atanh();
                let z = (u - mean[i]) / log_std[i].exp();
                -0.5 * z * z - log_std[i] - HALF_LOG_TAU - self.half(i).ln() - log_one_minus_tanh_sq(u)
            })
            .sum()
    }

    /// Log-density of a fixed in-box `action` and its gradient w.r.t. the network
    /// outputs `[mean, raw log-std]`. Actions on the box edge are pulled inside by `1e-6`.
    pub fn log_prob_with_grad(&self, output: &[f64], action: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dim();
        let mut grad = vec![0.0; 2 * d];
        let mut lp = 0.0;
        for i in 0..d {
            let raw = output[d + i];
            let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let std = log_std.exp();
            let t = ((action[i] - self.center(i)) / self.half(i)).clamp(-1.0 + 1e-6, 1.0 - 1e-6);
            let u = t.atanh();
            let z = (u - output[i]) / std;
            lp += -0.5 * z * z - log_std - HALF_LOG_TAU - self.half(i).ln() - log_one_minus_tanh_sq(u);
            grad[i] = z / std;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                grad[d + i] = z * z - 1.0;
            }
        }
        (lp, grad)
    }

    /// Gradient of a loss w.r.t. the network outputs `[mean, raw log-std]`, given
    /// `d loss / d action` and `d loss / d log_prob`.
    pub fn backward(&self, sample: &HeadSample, d_action: &[f64], d_log_prob: f64) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; 2 * d];
        for i in 0..d {
            let t = sample.squashed[i];
            let d_u = d_action[i] * self.half(i) * (1.0 - t * t) + d_log_prob * 2.0 * t;
            out[i] = d_u;
            if !sample.log_std_clamped[i] {
                out[d + i] = d_u * sample.std[i] * sample.noise[i] - d_log_prob;
            }
        }
        out
    }
}

/// State-conditioned squashed Gaussian policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub head: SquashedGaussianHead,
    pub features: FeatureMap,
}

impl GaussianPolicy {
    pub fn new<R: Rng>(
        features: FeatureMap,
        low: Vec<f64>,
        high: Vec<f64>,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let arch = MlpArch::new(features.dim(), hidden, 2 * low.len(), activation, OutputActivation::Identity);
        Self { net: Mlp::init(arch, rng), head: SquashedGaussianHead::new(low, high), features }
    }

    pub fn action_dim(&self) -> usize {
        self.head.dim()
    }

    /// Action and its log-probability; `deterministic` returns the squashed mean.
    pub fn sample_action<R: Rng>(&self, state: &[f64], deterministic: bool, rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let x = self.features.apply(state)?;
        let out = self.net.forward(&x)?;
        let s = if deterministic {
            self.head.sample_from_output(&out, None)
        } else {
            let noise: Vec<f64> = (0..self.action_dim()).map(|_| rng.sample(StandardNormal)).collect();
            self.head.sample_from_output(&out, Some(&noise))
        };
        if !s.log_prob.is_finite() {
            return Err(Error::NonFinite("policy log-probability"));
        }
        Ok((s.action, s.log_prob))
    }

    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let x = self.features.apply(state)?;
        let out = self.net.forward(&x)?;
        Ok(self.head.sample_from_output(&out, None).action)
    }

    /// Forward pass retaining what [`GaussianPolicy::backward`] needs.
    pub fn forward_sample(&self, state: &[f64], noise: &[f64]) -> Result<(Tape, HeadSample)> {
        let x = self.features.apply(state)?;
        let tape = self.net.forward_tape(&x)?;
        let s = self.head.sample_from_output(tape.output(), Some(noise));
        Ok((tape, s))
    }

    /// `log pi(action | state)` with the tape and output gradient needed to ascend it.
    pub fn log_prob_tape(&self, state: &[f64], action: &[f64]) -> Result<(Tape, f64, Vec<f64>)> {
        let x = self.features.apply(state)?;
        let tape = self.net.forward_tape(&x)?;
        let (lp, g) = self.head.log_prob_with_grad(tape.output(), action);
        Ok((tape, lp, g))
    }

    pub fn backward(
        &self,
        tape: &Tape,
        sample: &HeadSample,
        d_action: &[f64],
        d_log_prob: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let upstream = self.head.backward(sample, d_action, d_log_prob);
        self.net.backward_params(tape, &upstream, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vanishing_std_returns_mean() {
        let head = SquashedGaussianHead::new(vec![-1.0], vec![1.0]);
        let s = head.squash(&[0.3], &[-50.0], &[1.7]);
        assert!((s.action[0] - 0.3f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn zero_mean_symmetric_box_is_zero() {
        let head = SquashedGaussianHead::new(vec![-2.0, -1.0], vec![2.0, 1.0]);
        let s = head.sample_from_output(&[0.0, 0.0, 0.5, -0.5], None);
        assert_eq!(s.action, vec![0.0, 0.0]);
        assert!(s.log_prob.is_finite());
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        let head = SquashedGaussianHead::new(vec![-2.0], vec![3.0]);
        for (mean, log_std) in [(0.0, 0.0), (0.8, -1.0), (-1.5, 0.5)] {
            // midpoint rule in the pre-squash coordinate avoids the endpoint singularities
            let n = 200_000;
            let (lo, hi) = (-12.0f64, 12.0f64);
            let du = (hi - lo) / n as f64;
            let mut total = 0.0;
            for k in 0..n {
                let u = lo + (k as f64 + 0.5) * du;
                let a = 0.5 + 2.5 * u.tanh();
                let da_du = 2.5 * (1.0 - u.tanh().powi(2));
                total += head.log_prob(&[mean], &[log_std], &[a]).exp() * da_du * du;
            }
            assert!((total - 1.0).abs() < 1e-3, "integral {total}");
        }
    }

    #[test]
    fn sample_log_prob_matches_density() {
        let head = SquashedGaussianHead::new(vec![-1.0, 0.0], vec![1.0, 4.0]);
        let s = head.squash(&[0.2, -0.4], &[-0.3, 0.1], &[0.5, -1.2]);
        let direct = head.log_prob(&[0.2, -0.4], &[-0.3, 0.1], &s.action);
        assert!((s.log_prob - direct).abs() < 1e-9);
    }

    #[test]
    fn seeded_sampling_reproduces() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = GaussianPolicy::new(
            FeatureMap::identity(2),
            vec![-1.0],
            vec![1.0],
            &[8],
            Activation::Tanh,
            &mut rng,
        );
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| policy.sample_action(&[0.1, 0.2], false, &mut r).unwrap().0[0]).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        let det = policy.sample_action(&[0.1, 0.2], true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(det.0[0].abs() <= 1.0);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let head = SquashedGaussianHead::new(vec![-1.0, 0.0], vec![1.0, 2.0]);
        let out = [0.3, -0.2, -0.4, 0.1];
        let action = [0.5, 1.7];
        let (lp, g) = head.log_prob_with_grad(&out, &action);
        assert!((lp - head.log_prob(&out[..2], &out[2..], &action)).abs() < 1e-12);
        for k in 0..4 {
            let (mut up, mut down) = (out, out);
            up[k] += 1e-6;
            down[k] -= 1e-6;
            let fd = (head.log_prob_with_grad(&up, &action).0 - head.log_prob_with_grad(&down, &action).0) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "output {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn reparameterised_gradient_matches_finite_differences() {
        let head = SquashedGaussianHead::new(vec![-2.0], vec![1.0]);
        let noise = [0.7];
        // loss = 3 * action + 0.5 * log_prob
        let loss = |o: &[f64]| {
            let s = head.sample_from_output(o, Some(&noise));
            3.0 * s.action[0] + 0.5 * s.log_prob
        };
        let out = [0.2, -0.6];
        let s = head.sample_from_output(&out, Some(&noise));
        let g = head.backward(&s, &[3.0], 0.5);
        for k in 0..2 {
            let (mut up, mut down) = (out, out);
            up[k] += 1e-6;
            down[k] -= 1e-6;
            let fd = (loss(&up) - loss(&down)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6, "output {k}: {fd} vs {}", g[k]);
        }
    }
}
