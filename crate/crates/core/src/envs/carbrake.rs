//! One-dimensional car approaching an obstacle: drive forward for reward, brake in time.

use serde::{Deserialize, Serialize};

use super::{Env, StateIndexer, StepResult, TabularModel};
use crate::funcapprox::FeatureMap;
use crate::oracle::TabularSmdp;
use crate::smdp::{ActionSpace, SmdpSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarBrakeParams {
    pub a_max: f64,
    pub dt: f64,
    pub d_max: f64,
    pub v_max: f64,
}

impl Default for CarBrakeParams {
    fn default() -> Self {
        Self { a_max: 1.0, dt: 0.2, d_max: 10.0, v_max: 5.0 }
    }
}

/// Evenly spaced points `low, ..., high`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGrid {
    pub low: f64,
    pub high: f64,
    pub n: usize,
}

impl LinearGrid {
    pub fn new(low: f64, high: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 bins per axis, got {n}")));
        }
        Ok(Self { low, high, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn step(&self) -> f64 {
        (self.high - self.low) / (self.n - 1) as f64
    }

    pub fn value(&self, i: usize) -> f64 {
        self.low + i as f64 * self.step()
    }

    pub fn nearest(&self, x: f64) -> usize {
        let t = ((x - self.low) / self.step()).round();
        if t.is_nan() || t <= 0.0 {
            0
        } else {
            (t as usize).min(self.n - 1)
        }
    }
}

/// State `[distance, velocity]`, action `[acceleration fraction]` in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct CarBrakeEnv {
    spec: SmdpSpec,
    params: CarBrakeParams,
    d: f64,
    v: f64,
    done: bool,
}

impl CarBrakeEnv {
    pub fn new(params: CarBrakeParams, horizon: usize, gamma: f64, gamma_safe: f64) -> Self {
        let spec = SmdpSpec {
            state_dim: 2,
            action_space: ActionSpace::Continuous { low: vec![-1.0], high: vec![1.0] },
            gamma,
            gamma_safe,
            horizon,
            initial_distribution: "fixed: d = d_max, v = 0".into(),
        };
        let d = params.d_max;
        Self { spec, params, d, v: 0.0, done: false }
    }

    pub fn params(&self) -> &CarBrakeParams {
        &self.params
    }

    /// Places the car at an arbitrary state and clears the done flag.
    pub fn set_state(&mut self, d: f64, v: f64) {
        self.d = d;
        self.v = v;
        self.done = false;
    }

    /// Stopping distance under full braking exceeds the remaining distance.
    pub fn is_dead_end_closed_form(&self, d: f64, v: f64) -> bool {
        d > 0.0 && v * v / (2.0 * self.params.a_max) > d
    }

    /// Pure dynamics `(d, v, a) -> (d', v', failed)`.
    pub fn dynamics(&self, d: f64, v: f64, a: f64) -> (f64, f64, bool) {
        let p = &self.params;
        let a = a.clamp(-1.0, 1.0);
        let v2 = (v + a * p.a_max * p.dt).clamp(0.0, p.v_max);
        let d2 = d - v2 * p.dt;
        (d2, v2, d2 <= 0.0 && v2 > 0.0)
    }

    /// Nearest-bin tabular model over a `d_bins x v_bins` grid with accelerations
    /// `{-1, -0.5, 0, 0.5, 1}`.
    pub fn tabularize(&self, d_bins: usize, v_bins: usize) -> Result<TabularModel> {
        let d_grid = LinearGrid::new(0.0, self.params.d_max, d_bins)?;
        let v_grid = LinearGrid::new(0.0, self.params.v_max, v_bins)?;
        let actions = vec![-1.0, -0.5, 0.0, 0.5, 1.0];
        let n = d_bins * v_bins;
        let na = actions.len();
        let index = |i: usize, j: usize| i * v_bins + j;
        let mut fail = vec![false; n];
        let mut successor = vec![0usize; n * na];
        for i in 0..d_bins {
            for j in 0..v_bins {
                let s = index(i, j);
                let (d, v) = (d_grid.value(i), v_grid.value(j));
                fail[s] = d <= 0.0 && v > 0.0;
                for (k, &a) in actions.iter().enumerate() {
                    successor[s * na + k] = if fail[s] {
                        s
                    } else {
                        let (d2, v2, _) = self.dynamics(d, v, a);
                        index(d_grid.nearest(d2), v_grid.nearest(v2))
                    };
                }
            }
        }
        let start = index(d_grid.nearest(self.params.d_max), 0);
        let smdp = TabularSmdp::new(n, na, successor, fail, vec![start])?;
        Ok(TabularModel { smdp, indexer: StateIndexer::CarBrake { d_grid, v_grid, actions } })
    }
}

impl Env for CarBrakeEnv {
    fn spec(&self) -> &SmdpSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.d = self.params.d_max;
        self.v = 0.0;
        self.done = false;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let a = action.first().copied().filter(|a| a.is_finite()).unwrap_or(0.0);
        let (d2, v2, failed) = self.dynamics(self.d, self.v, a);
        self.d = d2;
        self.v = v2;
        self.done = failed;
        Ok(StepResult {
            next_state: self.state(),
            reward: if failed { 0.0 } else { v2 * self.params.dt },
            cost: u8::from(failed),
            done: failed,
        })
    }

    fn state(&self) -> Vec<f64> {
        vec![self.d, self.v]
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::from_bounds(&[0.0, 0.0], &[self.params.d_max, self.params.v_max])
    }
}
