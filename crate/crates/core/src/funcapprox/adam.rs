use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adaptive-moment optimiser state for one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one descent step for `grad` (gradient of the loss being minimised).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch { expected: self.m.len(), got: grad.len() });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let c = self.config;
        self.t += 1;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_converges() {
        // f(x, y) = (x - 1)^2 + 10 (y + 2)^2
        let mut p = vec![4.0, 3.0];
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), 2);
        let loss = |p: &[f64]| (p[0] - 1.0).powi(2) + 10.0 * (p[1] + 2.0).powi(2);
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.0), 20.0 * (p[1] + 2.0)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!(loss(&p) < 1e-6, "loss {}", loss(&p));
    }

    #[test]
    fn zero_gradient_and_zero_lr_leave_params() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Adam::new(AdamConfig::default(), 2);
        opt.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.0), 2);
        opt.step(&mut p, &[3.0, -4.0]).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = vec![0.0];
        let mut opt = Adam::new(AdamConfig::default(), 1);
        assert!(opt.step(&mut p, &[f64::NAN]).is_err());
        assert_eq!(p, vec![0.0]);
    }
}
