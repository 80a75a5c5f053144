//! Desk-scale safe MDP environments and their tabular discretisations.

mod carbrake;
mod grid;
mod point;
mod tabular;

pub use carbrake::{CarBrakeEnv, CarBrakeParams, LinearGrid};
pub use grid::{Chute, Direction, GridHazardEnv, GridLayout, GOAL_REWARD, STEP_REWARD};
pub use point::{Circle, PointLayout, PointMomentumEnv};
pub use tabular::TabularEnv;

use serde::{Deserialize, Serialize};

use crate::funcapprox::FeatureMap;
use crate::oracle::TabularSmdp;
use crate::smdp::{discrete_index, SmdpSpec};
use crate::{Error, Result};

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub cost: u8,
    pub done: bool,
}

/// A single-threaded episodic safe MDP.
pub trait Env {
    fn spec(&self) -> &SmdpSpec;

    /// Starts a new episode; the returned state is always safe.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    /// Advances one step. Out-of-box actions are clamped; stepping a finished episode errors.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;

    fn state(&self) -> Vec<f64>;

    /// Network input map for this environment's states.
    fn features(&self) -> FeatureMap;
}

/// Every environment in the crate behind one type.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    CarBrake(CarBrakeEnv),
    Grid(GridHazardEnv),
    Point(PointMomentumEnv),
    Tabular(TabularEnv),
}

macro_rules! dispatch {
    ($self:ident, $e:ident => $body:expr) => {
        match $self {
            AnyEnv::CarBrake($e) => $body,
            AnyEnv::Grid($e) => $body,
            AnyEnv::Point($e) => $body,
            AnyEnv::Tabular($e) => $body,
        }
    };
}

impl Env for AnyEnv {
    fn spec(&self) -> &SmdpSpec {
        dispatch!(self, e => e.spec())
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        dispatch!(self, e => e.reset(seed))
    }
    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        dispatch!(self, e => e.step(action))
    }
    fn state(&self) -> Vec<f64> {
        dispatch!(self, e => e.state())
    }
    fn features(&self) -> FeatureMap {
        dispatch!(self, e => e.features())
    }
}

/// How raw states and actions map onto a [`TabularSmdp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateIndexer {
    /// States are `[index]`, actions `[index]`.
    Identity,
    /// States are `[row, col]`, actions `[index]`.
    Grid { width: usize },
    /// Nearest-bin map over `(distance, velocity)` and a discrete acceleration set.
    CarBrake { d_grid: LinearGrid, v_grid: LinearGrid, actions: Vec<f64> },
}

/// A tabular model together with the map from environment states to table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    pub smdp: TabularSmdp,
    pub indexer: StateIndexer,
}

impl StateIndexer {
    pub fn state_index(&self, state: &[f64]) -> usize {
        match self {
            StateIndexer::Identity => state[0] as usize,
            StateIndexer::Grid { width } => state[0] as usize * width + state[1] as usize,
            StateIndexer::CarBrake { d_grid, v_grid, .. } => {
                d_grid.nearest(state[0].max(d_grid.low)) * v_grid.len() + v_grid.nearest(state[1])
            }
        }
    }
}

impl TabularModel {
    pub fn state_index(&self, state: &[f64]) -> usize {
        self.indexer.state_index(state)
    }

    pub fn action_index(&self, action: &[f64]) -> usize {
        match &self.indexer {
            StateIndexer::CarBrake { actions, .. } => {
                let a = action[0];
                crate::oracle::argmin(&actions.iter().map(|x| (x - a).abs()).collect::<Vec<_>>())
            }
            _ => discrete_index(action, self.smdp.n_actions()),
        }
    }

    /// Raw action vector for a table action index.
    pub fn action_value(&self, index: usize) -> Vec<f64> {
        match &self.indexer {
            StateIndexer::CarBrake { actions, .. } => vec![actions[index]],
            _ => vec![index as f64],
        }
    }

    /// Representative raw state of a table row.
    pub fn state_value(&self, index: usize) -> Vec<f64> {
        match &self.indexer {
            StateIndexer::Identity => vec![index as f64],
            StateIndexer::Grid { width } => vec![(index / width) as f64, (index % width) as f64],
            StateIndexer::CarBrake { d_grid, v_grid, .. } => {
                vec![d_grid.value(index / v_grid.len()), v_grid.value(index % v_grid.len())]
            }
        }
    }
}

/// Builds the tabular model of a discrete or discretisable environment.
///
/// `bins` is `(distance bins, velocity bins)` for CarBrake and ignored otherwise.
pub fn tabularize(env: &AnyEnv, bins: (usize, usize)) -> Result<TabularModel> {
    match env {
        AnyEnv::CarBrake(e) => e.tabularize(bins.0, bins.1),
        AnyEnv::Grid(e) => e.tabularize(),
        AnyEnv::Tabular(e) => Ok(TabularModel { smdp: e.smdp().clone(), indexer: StateIndexer::Identity }),
        AnyEnv::Point(_) => Err(Error::InvalidArgument(
            "point-momentum has no exact tabular model".into(),
        )),
    }
}
