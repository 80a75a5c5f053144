//! 2-D point mass with momentum among circular hazards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Env, StepResult};
use crate::funcapprox::FeatureMap;
use crate::smdp::{ActionSpace, SmdpSpec};
use crate::{Error, Result};

pub const ARENA: f64 = 1.0;
pub const MAX_SPEED: f64 = 0.3;
pub const ACCEL: f64 = 0.1;
pub const GOAL_BONUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub x: f64,
    pub y: f64,
    pub r: f64,
}

impl Circle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (p[0] - self.x).hypot(p[1] - self.y) <= self.r
    }

    /// Whether the segment `a -> b` touches the disc.
    pub fn touches_segment(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((self.x - a[0]) * dx + (self.y - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (a[0] + t * dx, a[1] + t * dy);
        (px - self.x).hypot(py - self.y) <= self.r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLayout {
    pub hazards: Vec<Circle>,
    pub goal: Circle,
    /// Horizontal hazard oscillation `(amplitude, period in steps)`; extends the state.
    pub drift: Option<(f64, f64)>,
    /// Std of Gaussian action noise; 0 keeps the dynamics deterministic.
    pub action_noise: f64,
    /// Clearance kept between sampled start positions and hazards.
    pub start_margin: f64,
}

impl PointLayout {
    pub fn standard() -> Self {
        Self {
            hazards: vec![
                Circle { x: 0.0, y: 0.0, r: 0.25 },
                Circle { x: 0.6, y: 0.1, r: 0.18 },
                Circle { x: 0.1, y: 0.6, r: 0.18 },
                Circle { x: -0.55, y: 0.45, r: 0.18 },
                Circle { x: 0.45, y: -0.55, r: 0.18 },
            ],
            goal: Circle { x: 0.6, y: 0.6, r: 0.15 },
            drift: None,
            action_noise: 0.0,
            start_margin: 0.1,
        }
    }
}

/// State `[px, py, ux, uy]` (plus hazard centres and phase when drifting),
/// action: acceleration in `[-1, 1]^2`.
#[derive(Debug, Clone)]
pub struct PointMomentumEnv {
    spec: SmdpSpec,
    layout: PointLayout,
    pos: [f64; 2],
    vel: [f64; 2],
    t: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl PointMomentumEnv {
    pub fn new(layout: PointLayout, horizon: usize, gamma: f64, gamma_safe: f64) -> Self {
        let extra = if layout.drift.is_some() { 2 * layout.hazards.len() + 2 } else { 0 };
        let spec = SmdpSpec {
            state_dim: 4 + extra,
            action_space: ActionSpace::Continuous { low: vec![-1.0; 2], high: vec![1.0; 2] },
            gamma,
            gamma_safe,
            horizon,
            initial_distribution: "uniform start away from hazards and goal".into(),
        };
        Self {
            spec,
            layout,
            pos: [0.0; 2],
            vel: [0.0; 2],
            t: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn layout(&self) -> &PointLayout {
        &self.layout
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
        self.done = false;
    }

    fn hazards_at(&self, t: usize) -> Vec<Circle> {
        match self.layout.drift {
            None => self.layout.hazards.clone(),
            Some((amp, period)) => {
                let shift = amp * (std::f64::consts::TAU * t as f64 / period).sin();
                self.layout.hazards.iter().map(|h| Circle { x: h.x + shift, ..*h }).collect()
            }
        }
    }

    /// Pure deterministic dynamics on a static layout:
    /// `(pos, vel, action) -> (pos', vel', hit hazard)`.
    pub fn dynamics(hazards: &[Circle], pos: [f64; 2], vel: [f64; 2], action: [f64; 2]) -> ([f64; 2], [f64; 2], bool) {
        let mut v2 = [0.0; 2];
        let mut p2 = [0.0; 2];
        for i in 0..2 {
            v2[i] = (vel[i] + ACCEL * action[i].clamp(-1.0, 1.0)).clamp(-MAX_SPEED, MAX_SPEED);
            p2[i] = pos[i] + v2[i];
            if p2[i].abs() > ARENA {
                p2[i] = p2[i].clamp(-ARENA, ARENA);
                v2[i] = 0.0;
            }
        }
        let hit = hazards.iter().any(|h| h.touches_segment(pos, p2));
        (p2, v2, hit)
    }

    /// Whether some action sequence brings the point to rest without touching a hazard.
    ///
    /// Searches `{-1, 0, 1}^2` plus the exact braking action for `depth` steps. Once every
    /// velocity component is within one step of braking the point can stop in place.
    pub fn can_stop_safely(hazards: &[Circle], pos: [f64; 2], vel: [f64; 2], depth: usize) -> bool {
        if hazards.iter().any(|h| h.contains(pos)) {
            return false;
        }
        if vel.iter().all(|v| v.abs() <= ACCEL + 1e-12) {
            return true;
        }
        if depth == 0 {
            return false;
        }
        let brake = [(-vel[0] / ACCEL).clamp(-1.0, 1.0), (-vel[1] / ACCEL).clamp(-1.0, 1.0)];
        let mut candidates = vec![brake];
        for ax in [-1.0, 0.0, 1.0] {
            for ay in [-1.0, 0.0, 1.0] {
                candidates.push([ax, ay]);
            }
        }
        candidates.into_iter().any(|a| {
            let (p2, v2, hit) = Self::dynamics(hazards, pos, vel, a);
            !hit && Self::can_stop_safely(hazards, p2, v2, depth - 1)
        })
    }
}

impl Env for PointMomentumEnv {
    fn spec(&self) -> &SmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.done = false;
        self.vel = [0.0; 2];
        let hazards = self.hazards_at(0);
        let goal = self.layout.goal;
        loop {
            let p = [self.rng.random_range(-0.9..0.9), self.rng.random_range(-0.9..0.9)];
            let clear = hazards
                .iter()
                .all(|h| (p[0] - h.x).hypot(p[1] - h.y) > h.r + self.layout.start_margin);
            if clear && (p[0] - goal.x).hypot(p[1] - goal.y) > goal.r + 0.5 {
                self.pos = p;
                break;
            }
        }
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        if action.len() != 2 {
            return Err(Error::ShapeMismatch { expected: 2, got: action.len() });
        }
        let mut a = [action[0], action[1]];
        for x in &mut a {
            if !x.is_finite() {
                *x = 0.0;
            }
            if self.layout.action_noise > 0.0 {
                let n: f64 = self.rng.sample(StandardNormal);
                *x += self.layout.action_noise * n;
            }
        }
        let hazards = self.hazards_at(self.t + 1);
        let (p2, v2, hit) = Self::dynamics(&hazards, self.pos, self.vel, a);
        let g = self.layout.goal;
        let before = (self.pos[0] - g.x).hypot(self.pos[1] - g.y);
        let after = (p2[0] - g.x).hypot(p2[1] - g.y);
        let reached = !hit && g.contains(p2);
        self.pos = p2;
        self.vel = v2;
        self.t += 1;
        self.done = hit || reached;
        let reward = if hit {
            0.0
        } else {
            (before - after) + if reached { GOAL_BONUS } else { 0.0 }
        };
        Ok(StepResult { next_state: self.state(), reward, cost: u8::from(hit), done: self.done })
    }

    fn state(&self) -> Vec<f64> {
        let mut s = vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]];
        if let Some((_, period)) = self.layout.drift {
            for h in self.hazards_at(self.t) {
                s.extend([h.x, h.y]);
            }
            let phase = std::f64::consts::TAU * self.t as f64 / period;
            s.extend([phase.sin(), phase.cos()]);
        }
        s
    }

    fn features(&self) -> FeatureMap {
        let offset = vec![0.0; self.spec.state_dim];
        let mut scale = vec![1.0; self.spec.state_dim];
        scale[2] = 1.0 / MAX_SPEED;
        scale[3] = 1.0 / MAX_SPEED;
        if self.layout.drift.is_some() {
            return FeatureMap::Affine { offset, scale };
        }
        // range-sensor style inputs: clearance and bearing to every hazard and the goal
        let discs = self.layout.hazards.iter().chain([&self.layout.goal]).map(|c| [c.x, c.y, c.r]).collect();
        FeatureMap::AffineDiscs { offset, scale, discs }
    }
}
