//! Online task learning with a frozen behaviour-correcting shield.
//!
//! Each step the task learner proposes an action, the shield may replace it, the
//! environment executes the result, and the learner stores the step relabeled with its
//! own proposed action. The shield is never updated here.

mod qlearn;
mod replay;
mod sac;
mod shield;

pub use qlearn::{QLearnConfig, QLearner};
pub use replay::{ReplayBuffer, StoredTransition};
pub use sac::{SacAgent, SacConfig, SacLosses};
pub use shield::{Shield, ShieldKind};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{AnyEnv, Env, StateIndexer};
use crate::smdp::{ActionSpace, Transition};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub enum LearnerKind {
    Sac(Box<SacAgent>),
    QTable(QLearner),
}

/// Task policy together with its replay buffer.
#[derive(Debug, Clone)]
pub struct TaskLearner {
    pub kind: LearnerKind,
    pub replay: ReplayBuffer,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub sac: SacConfig,
    pub qlearn: QLearnConfig,
}

impl TaskLearner {
    /// SAC for continuous action spaces, tabular Q-learning for discrete ones.
    pub fn for_env<R: Rng>(env: &AnyEnv, cfg: &LearnerConfig, rng: &mut R) -> Result<Self> {
        let spec = env.spec();
        match &spec.action_space {
            ActionSpace::Continuous { low, high } => {
                let agent = SacAgent::new(env.features(), low.clone(), high.clone(), spec.gamma, cfg.sac.clone(), rng)?;
                Ok(Self { kind: LearnerKind::Sac(Box::new(agent)), replay: ReplayBuffer::new(cfg.sac.buffer_capacity) })
            }
            ActionSpace::Discrete { n } => {
                let (n_states, indexer) = match env {
                    AnyEnv::Grid(g) => (g.layout().width * g.layout().height, StateIndexer::Grid { width: g.layout().width }),
                    AnyEnv::Tabular(t) => (t.smdp().n_states(), StateIndexer::Identity),
                    _ => return Err(Error::InvalidArgument("no tabular indexing for this environment".into())),
                };
                let q = QLearner::new(n_states, *n, indexer, spec.gamma, cfg.qlearn.clone())?;
                Ok(Self { kind: LearnerKind::QTable(q), replay: ReplayBuffer::new(1) })
            }
        }
    }

    /// Exploratory action during training, or the deterministic policy action for evaluation.
    pub fn act<R: Rng>(&self, state: &[f64], explore: bool, step: usize, rng: &mut R) -> Result<Vec<f64>> {
        match &self.kind {
            LearnerKind::Sac(agent) => {
                if explore && step < agent.cfg.warmup_steps {
                    Ok(agent.random_action(rng))
                } else {
                    agent.act(state, !explore, rng)
                }
            }
            LearnerKind::QTable(q) => Ok(vec![q.act(state, explore, rng)? as f64]),
        }
    }

    /// Stores a relabeled step and runs `updates` learning updates; returns the last loss.
    pub fn observe<R: Rng>(&mut self, t: &Transition, step: usize, updates: usize, rng: &mut R) -> Result<Option<f64>> {
        let stored = StoredTransition::relabeled(t);
        match &mut self.kind {
            LearnerKind::QTable(q) => Ok(Some(q.update(&stored)?.powi(2))),
            LearnerKind::Sac(agent) => {
                self.replay.push(stored);
                if step < agent.cfg.warmup_steps || self.replay.len() < agent.cfg.batch_size {
                    return Ok(None);
                }
                let mut last = None;
                for _ in 0..updates {
                    let batch = self.replay.sample(rng, agent.cfg.batch_size);
                    last = Some(agent.update(&batch, rng)?.critic);
                }
                Ok(last)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineConfig {
    pub steps: usize,
    /// Learner updates per environment step.
    pub updates_per_step: usize,
    /// Keep every executed transition in the trace.
    pub keep_transitions: bool,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self { steps: 20_000, updates_per_step: 1, keep_transitions: false }
    }
}

/// One environment step of an online run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub episode: usize,
    pub reward: f64,
    pub cost: u8,
    pub corrected: bool,
    pub epsilon: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub steps: usize,
    pub episode_return: f64,
    pub violated: bool,
    pub corrections: usize,
}

#[derive(Debug, Clone, Default)]
pub struct OnlineTrace {
    pub rows: Vec<TraceRow>,
    pub episodes: Vec<EpisodeSummary>,
    pub transitions: Vec<Transition>,
    /// Shield fingerprint before and after the run.
    pub shield_fingerprint: Option<(u64, u64)>,
}

impl OnlineTrace {
    pub fn total_violations(&self) -> usize {
        self.rows.iter().filter(|r| r.cost == 1).count()
    }

    pub fn total_corrections(&self) -> usize {
        self.rows.iter().filter(|r| r.corrected).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_episodes_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.episodes {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Trains `learner` online, correcting its actions with `shield` when one is given.
///
/// Episodes end on termination or at the environment horizon.
pub fn train_online(
    env: &mut AnyEnv,
    shield: Option<&Shield>,
    learner: &mut TaskLearner,
    cfg: &OnlineConfig,
    seed: u64,
) -> Result<OnlineTrace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = env.spec().horizon;
    let action_space = env.spec().action_space.clone();
    let mut trace = OnlineTrace::default();
    let before = shield.map(Shield::fingerprint);

    let mut state = env.reset(rng.random());
    let mut episode = 0;
    let mut ep = EpisodeSummary { episode: 0, steps: 0, episode_return: 0.0, violated: false, corrections: 0 };
    for step in 0..cfg.steps {
        let proposed = action_space.clamp(&learner.act(&state, true, step, &mut rng)?);
        let (executed, corrected) = match shield {
            Some(s) => s.behavior_correct(&state, &proposed)?,
            None => (proposed.clone(), false),
        };
        let res = env.step(&executed).map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
        let t = Transition {
            state: state.clone(),
            proposed_action: proposed,
            executed_action: executed,
            next_state: res.next_state.clone(),
            reward: res.reward,
            cost: res.cost,
            done: res.done,
            corrected,
        };
        learner
            .observe(&t, step, cfg.updates_per_step, &mut rng)
            .map_err(|e| Error::AtStep { step, source: Box::new(e) })?;
        trace.rows.push(TraceRow {
            step,
            episode,
            reward: res.reward,
            cost: res.cost,
            corrected,
            epsilon: shield.map(Shield::epsilon),
            seed,
        });
        ep.steps += 1;
        ep.episode_return += res.reward;
        ep.violated |= res.cost == 1;
        ep.corrections += corrected as usize;
        if cfg.keep_transitions {
            trace.transitions.push(t);
        }
        state = res.next_state;
        if res.done || ep.steps >= horizon {
            trace.episodes.push(ep.clone());
            episode += 1;
            ep = EpisodeSummary { episode, steps: 0, episode_return: 0.0, violated: false, corrections: 0 };
            state = env.reset(rng.random());
        }
    }
    if ep.steps > 0 {
        trace.episodes.push(ep);
    }
    trace.shield_fingerprint = before.zip(shield.map(Shield::fingerprint));
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{tabularize, GridHazardEnv, GridLayout};
    use crate::oracle::value_iteration_optimal;

    fn grid() -> AnyEnv {
        AnyEnv::Grid(GridHazardEnv::new(GridLayout::standard(), 100, 0.99, 0.9).unwrap())
    }

    fn oracle_shield(env: &AnyEnv, epsilon: f64) -> Shield {
        let model = tabularize(env, (0, 0)).unwrap();
        let values = value_iteration_optimal(&model.smdp, env.spec().gamma_safe, 1e-12).unwrap();
        Shield::oracle(model, values, epsilon).unwrap()
    }

    fn learner(env: &AnyEnv, explore: f64) -> TaskLearner {
        let cfg = LearnerConfig { qlearn: QLearnConfig { explore_epsilon: explore, ..Default::default() }, ..Default::default() };
        TaskLearner::for_env(env, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn oracle_shield_prevents_all_violations() {
        let mut env = grid();
        let shield = oracle_shield(&env, 0.5);
        let mut l = learner(&env, 1.0);
        let cfg = OnlineConfig { steps: 5000, keep_transitions: true, ..Default::default() };
        let trace = train_online(&mut env, Some(&shield), &mut l, &cfg, 4).unwrap();
        assert_eq!(trace.total_violations(), 0);
        assert!(trace.total_corrections() > 0);
        let (a, b) = trace.shield_fingerprint.unwrap();
        assert_eq!(a, b);
        for t in &trace.transitions {
            if !t.corrected {
                assert_eq!(t.proposed_action, t.executed_action);
            }
        }
    }

    #[test]
    fn random_unshielded_policy_violates() {
        let mut env = grid();
        let mut l = learner(&env, 1.0);
        let cfg = OnlineConfig { steps: 5000, ..Default::default() };
        let trace = train_online(&mut env, None, &mut l, &cfg, 4).unwrap();
        assert!(trace.total_violations() > 0);
        assert_eq!(trace.total_corrections(), 0);
        assert!(trace.rows.iter().all(|r| r.epsilon.is_none()));
    }

    #[test]
    fn learner_trains_on_proposed_action() {
        let mut env = grid();
        let shield = oracle_shield(&env, 0.5);
        let mut l = learner(&env, 1.0);
        let cfg = OnlineConfig { steps: 3000, keep_transitions: true, ..Default::default() };
        let trace = train_online(&mut env, Some(&shield), &mut l, &cfg, 5).unwrap();
        let t = trace.transitions.iter().find(|t| t.corrected && t.proposed_action != t.executed_action).unwrap();
        let stored = StoredTransition::relabeled(t);
        assert_eq!(stored.action, t.proposed_action);
    }

    #[test]
    fn open_grid_q_learning_reaches_goal_greedily() {
        let mut env = AnyEnv::Grid(GridHazardEnv::new(GridLayout::open(), 100, 0.99, 0.9).unwrap());
        let mut l = learner(&env, 0.2);
        let cfg = OnlineConfig { steps: 60_000, ..Default::default() };
        train_online(&mut env, None, &mut l, &cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = env.reset(0);
        let mut steps = 0;
        loop {
            let a = l.act(&state, false, usize::MAX, &mut rng).unwrap();
            let r = env.step(&a).unwrap();
            steps += 1;
            state = r.next_state;
            if r.done || steps >= 100 {
                assert_eq!(r.reward, crate::envs::GOAL_REWARD);
                break;
            }
        }
        let layout = GridLayout::open();
        let manhattan = layout.start.0.abs_diff(layout.goal.0) + layout.start.1.abs_diff(layout.goal.1);
        assert_eq!(steps, manhattan);
    }

    #[test]
    fn same_seed_same_trace() {
        let run = || {
            let mut env = grid();
            let mut l = learner(&env, 0.3);
            train_online(&mut env, None, &mut l, &OnlineConfig { steps: 800, ..Default::default() }, 11).unwrap().rows
        };
        assert_eq!(run(), run());
    }
}
