//! 12x12 hazard gridworld with drift chutes that form multi-step dead-ends.

use serde::{Deserialize, Serialize};

use super::{Env, StateIndexer, StepResult, TabularModel};
use crate::funcapprox::FeatureMap;
use crate::oracle::TabularSmdp;
use crate::smdp::{discrete_index, ActionSpace, SmdpSpec};
use crate::{Error, Result};

pub const STEP_REWARD: f64 = 0.0;
pub const GOAL_REWARD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    fn delta(self) -> (isize, isize) {
        match self {
            Direction::Up => (-1, 0),
            Direction::Down => (1, 0),
            Direction::Left => (0, -1),
            Direction::Right => (0, 1),
        }
    }
}

/// A cell that pushes the agent one cell per step in `drift`, ignoring the action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chute {
    pub cell: (usize, usize),
    pub drift: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub hazards: Vec<(usize, usize)>,
    pub chutes: Vec<Chute>,
}

impl GridLayout {
    /// A hazard wall with a one-cell gap on row 6 and a four-cell chute on row 2
    /// draining into the hazard at (2, 8).
    pub fn standard() -> Self {
        let mut hazards: Vec<(usize, usize)> = (0..12).filter(|&c| c != 5).map(|c| (6, c)).collect();
        hazards.push((2, 8));
        let chutes = (4..8).map(|c| Chute { cell: (2, c), drift: Direction::Right }).collect();
        Self { width: 12, height: 12, start: (11, 0), goal: (0, 11), hazards, chutes }
    }

    /// No hazards or chutes.
    pub fn open() -> Self {
        Self { width: 12, height: 12, start: (11, 0), goal: (0, 11), hazards: vec![], chutes: vec![] }
    }

    pub fn is_hazard(&self, cell: (usize, usize)) -> bool {
        self.hazards.contains(&cell)
    }

    pub fn chute_at(&self, cell: (usize, usize)) -> Option<Direction> {
        self.chutes.iter().find(|c| c.cell == cell).map(|c| c.drift)
    }

    fn shift(&self, (r, c): (usize, usize), dir: Direction) -> (usize, usize) {
        let (dr, dc) = dir.delta();
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            (r, c)
        } else {
            (nr as usize, nc as usize)
        }
    }

    /// Deterministic successor of `cell` under action `dir` (goal and hazards absorb).
    pub fn next_cell(&self, cell: (usize, usize), dir: Direction) -> (usize, usize) {
        if cell == self.goal || self.is_hazard(cell) {
            return cell;
        }
        match self.chute_at(cell) {
            Some(drift) => self.shift(cell, drift),
            None => self.shift(cell, dir),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |(r, c): (usize, usize)| r < self.height && c < self.width;
        let cells = [self.start, self.goal].into_iter().chain(self.hazards.iter().copied());
        if let Some(bad) = cells.chain(self.chutes.iter().map(|c| c.cell)).find(|&x| !inside(x)) {
            return Err(Error::InvalidArgument(format!("cell {bad:?} outside the grid")));
        }
        if self.is_hazard(self.start) || self.chute_at(self.start).is_some() || self.start == self.goal {
            return Err(Error::InvalidArgument("start must be an open, non-goal cell".into()));
        }
        for chute in &self.chutes {
            let mut at = chute.cell;
            for _ in 0..=self.chutes.len() {
                if self.is_hazard(at) {
                    break;
                }
                let next = self.next_cell(at, Direction::Up);
                if next == at || self.chute_at(next).is_none() && !self.is_hazard(next) {
                    return Err(Error::InvalidArgument(format!(
                        "chute at {:?} does not drain into a hazard",
                        chute.cell
                    )));
                }
                at = next;
            }
        }
        Ok(())
    }
}

/// State `[row, col]`, action `[index]` with 0 = up, 1 = down, 2 = left, 3 = right.
#[derive(Debug, Clone)]
pub struct GridHazardEnv {
    spec: SmdpSpec,
    layout: GridLayout,
    pos: (usize, usize),
    done: bool,
}

impl GridHazardEnv {
    pub fn new(layout: GridLayout, horizon: usize, gamma: f64, gamma_safe: f64) -> Result<Self> {
        layout.validate()?;
        let spec = SmdpSpec {
            state_dim: 2,
            action_space: ActionSpace::Discrete { n: 4 },
            gamma,
            gamma_safe,
            horizon,
            initial_distribution: "fixed start cell".into(),
        };
        let pos = layout.start;
        Ok(Self { spec, layout, pos, done: false })
    }

    pub fn layout(&self) -> &GridLayout {
        &self.layout
    }

    pub fn set_cell(&mut self, cell: (usize, usize)) {
        self.pos = cell;
        self.done = false;
    }

    pub fn tabularize(&self) -> Result<TabularModel> {
        let (w, h) = (self.layout.width, self.layout.height);
        let n = w * h;
        let mut successor = Vec::with_capacity(n * 4);
        let mut fail = vec![false; n];
        for r in 0..h {
            for c in 0..w {
                fail[r * w + c] = self.layout.is_hazard((r, c));
                for dir in Direction::ALL {
                    let (nr, nc) = self.layout.next_cell((r, c), dir);
                    successor.push(nr * w + nc);
                }
            }
        }
        let start = self.layout.start.0 * w + self.layout.start.1;
        let smdp = TabularSmdp::new(n, 4, successor, fail, vec![start])?;
        Ok(TabularModel { smdp, indexer: StateIndexer::Grid { width: w } })
    }
}

impl Env for GridHazardEnv {
    fn spec(&self) -> &SmdpSpec {
        &self.spec
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.layout.start;
        self.done = false;
        self.state()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let dir = Direction::ALL[discrete_index(action, 4)];
        self.pos = self.layout.next_cell(self.pos, dir);
        let failed = self.layout.is_hazard(self.pos);
        let reached = self.pos == self.layout.goal;
        self.done = failed || reached;
        Ok(StepResult {
            next_state: self.state(),
            reward: if reached { GOAL_REWARD } else { STEP_REWARD },
            cost: u8::from(failed),
            done: self.done,
        })
    }

    fn state(&self) -> Vec<f64> {
        vec![self.pos.0 as f64, self.pos.1 as f64]
    }

    fn features(&self) -> FeatureMap {
        FeatureMap::GridOneHot { width: self.layout.width, height: self.layout.height }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{enumerate_dead_ends, value_iteration_optimal};
    use crate::smdp::StateLabel;

    fn env() -> GridHazardEnv {
        GridHazardEnv::new(GridLayout::standard(), 100, 0.99, 0.9).unwrap()
    }

    #[test]
    fn reset_lands_on_open_start() {
        let mut e = env();
        let s = e.reset(3);
        assert_eq!(s, vec![11.0, 0.0]);
        let l = e.layout();
        assert!(!l.is_hazard(l.start) && l.chute_at(l.start).is_none());
    }

    #[test]
    fn chute_ignores_action() {
        let mut e = env();
        e.set_cell((2, 4));
        let r = e.step(&[0.0]).unwrap();
        assert_eq!(r.next_state, vec![2.0, 5.0]);
        assert_eq!(r.cost, 0);
        for _ in 0..2 {
            e.step(&[1.0]).unwrap();
        }
        let r = e.step(&[2.0]).unwrap();
        assert_eq!(r.next_state, vec![2.0, 8.0]);
        assert_eq!((r.cost, r.done), (1, true));
    }

    #[test]
    fn goal_pays_and_ends() {
        let mut e = env();
        e.set_cell((0, 10));
        let r = e.step(&[3.0]).unwrap();
        assert_eq!((r.reward, r.done, r.cost), (GOAL_REWARD, true, 0));
        assert!(e.step(&[3.0]).is_err());
    }

    #[test]
    fn tabular_labels_match_layout() {
        let m = env().tabularize().unwrap();
        assert_eq!(m.smdp.n_states(), 144);
        let labels = enumerate_dead_ends(&m.smdp);
        let layout = GridLayout::standard();
        for c in &layout.chutes {
            assert_eq!(labels[c.cell.0 * 12 + c.cell.1], StateLabel::DeadEnd);
        }
        assert_eq!(labels[layout.goal.0 * 12 + layout.goal.1], StateLabel::Safe);
        for r in 0..12 {
            for c in 0..12 {
                let open = !layout.is_hazard((r, c)) && layout.chute_at((r, c)).is_none();
                let safe_neighbour = Direction::ALL.iter().any(|&d| {
                    let n = layout.next_cell((r, c), d);
                    n != (r, c) && !layout.is_hazard(n) && layout.chute_at(n).is_none()
                });
                if open && safe_neighbour {
                    assert_eq!(labels[r * 12 + c], StateLabel::Safe, "cell ({r}, {c})");
                }
            }
        }
        let ex = value_iteration_optimal(&m.smdp, 0.9, 1e-12).unwrap();
        assert_eq!(ex.h_dead, 4);
    }

    #[test]
    fn broken_chute_is_rejected() {
        let mut l = GridLayout::open();
        l.chutes.push(Chute { cell: (0, 0), drift: Direction::Up });
        assert!(l.validate().is_err());
    }
}
