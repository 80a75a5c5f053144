//! Small differentiable function approximators used by critics and policies.

mod adam;
mod checkpoint;
mod features;
mod gaussian;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use features::FeatureMap;
pub use gaussian::{GaussianPolicy, HeadSample, SquashedGaussianHead, LOG_STD_MAX, LOG_STD_MIN};
pub use mlp::{Activation, Mlp, MlpArch, OutputActivation, Tape};

use crate::Result;

/// Relative error between two gradient entries, floored so near-zero pairs compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between the reverse-mode parameter gradient of
/// `upstream . net(x)` and its central finite-difference estimate with step `h`.
pub fn gradient_check(net: &Mlp, x: &[f64], upstream: &[f64], h: f64) -> Result<f64> {
    let tape = net.forward_tape(x)?;
    let mut grad = net.zero_grad();
    net.backward(&tape, upstream, &mut grad)?;
    let objective = |n: &Mlp| -> Result<f64> {
        Ok(n.forward(x)?.iter().zip(upstream).map(|(y, u)| y * u).sum())
    };
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..grad.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let up = objective(&probe)?;
        probe.params_mut()[i] = orig - h;
        let down = objective(&probe)?;
        probe.params_mut()[i] = orig;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Same check for the input gradient returned by [`Mlp::backward`].
pub fn input_gradient_check(net: &Mlp, x: &[f64], upstream: &[f64], h: f64) -> Result<f64> {
    let tape = net.forward_tape(x)?;
    let mut grad = net.zero_grad();
    let dx = net.backward(&tape, upstream, &mut grad)?;
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let up: f64 = net.forward(&probe)?.iter().zip(upstream).map(|(y, u)| y * u).sum();
        probe[i] = x[i] - h;
        let down: f64 = net.forward(&probe)?.iter().zip(upstream).map(|(y, u)| y * u).sum();
        probe[i] = x[i];
        worst = worst.max(relative_error(dx[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_networks_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [Activation::Tanh, Activation::Relu] {
            for out in [OutputActivation::Identity, OutputActivation::Logistic] {
                let arch = MlpArch::new(3, &[7, 5], 2, act, out);
                for _ in 0..5 {
                    let net = Mlp::init(arch.clone(), &mut rng);
                    let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let u: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                    assert!(gradient_check(&net, &x, &u, 1e-5).unwrap() < 1e-4);
                    assert!(input_gradient_check(&net, &x, &u, 1e-5).unwrap() < 1e-4);
                }
            }
        }
    }
}
