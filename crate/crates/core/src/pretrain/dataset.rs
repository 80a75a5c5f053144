//! Offline transition datasets: collection, the pre-violation window filter, and storage.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::behavior::{BehaviorPolicy, UniformPolicy};
use crate::envs::{AnyEnv, Env};
use crate::oracle::TabularSmdp;
use crate::smdp::io::{read_transitions_from, read_u64, write_transitions_to};
use crate::smdp::{validate_episode, Transition};
use crate::{Error, Result};

const EPISODE_MAGIC: &[u8; 8] = b"DEAREPS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Random,
    TaskReplay,
}

/// Contiguous run of transitions belonging to one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpan {
    pub start: usize,
    pub len: usize,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
    episodes: Vec<EpisodeSpan>,
}

impl OfflineDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one episode after checking its cost/termination contract.
    pub fn push_episode(&mut self, episode: Vec<Transition>, provenance: Provenance) -> Result<()> {
        if episode.is_empty() {
            return Ok(());
        }
        validate_episode(&episode)?;
        if let Some(first) = self.transitions.first() {
            if first.state.len() != episode[0].state.len() {
                return Err(Error::ShapeMismatch { expected: first.state.len(), got: episode[0].state.len() });
            }
        }
        self.episodes.push(EpisodeSpan { start: self.transitions.len(), len: episode.len(), provenance });
        self.transitions.extend(episode);
        Ok(())
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn episodes(&self) -> &[EpisodeSpan] {
        &self.episodes
    }

    pub fn episode(&self, span: &EpisodeSpan) -> &[Transition] {
        &self.transitions[span.start..span.start + span.len]
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn failed_episodes(&self) -> usize {
        self.episodes.iter().filter(|e| self.episode(e).last().is_some_and(|t| t.cost == 1)).count()
    }

    pub fn done_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.done).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_transitions_to(&mut w, &self.transitions)?;
        w.write_all(EPISODE_MAGIC)?;
        w.write_all(&(self.episodes.len() as u64).to_le_bytes())?;
        for e in &self.episodes {
            w.write_all(&(e.start as u64).to_le_bytes())?;
            w.write_all(&(e.len as u64).to_le_bytes())?;
            w.write_all(&[match e.provenance {
                Provenance::Random => 0u8,
                Provenance::TaskReplay => 1,
            }])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format { path: path.into(), reason: reason.into() };
        let mut r = BufReader::new(File::open(path)?);
        let transitions = read_transitions_from(&mut r, path)?;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != EPISODE_MAGIC {
            return Err(bad("missing episode table"));
        }
        let n = read_u64(&mut r)? as usize;
        let mut episodes = Vec::with_capacity(n);
        let mut expected_start = 0;
        for _ in 0..n {
            let start = read_u64(&mut r)? as usize;
            let len = read_u64(&mut r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let provenance = match tag[0] {
                0 => Provenance::Random,
                1 => Provenance::TaskReplay,
                _ => return Err(bad("unknown provenance tag")),
            };
            if start != expected_start || len == 0 {
                return Err(bad("episode table is not contiguous"));
            }
            expected_start += len;
            episodes.push(EpisodeSpan { start, len, provenance });
        }
        if expected_start != transitions.len() {
            return Err(bad("episode table does not cover the transitions"));
        }
        let ds = Self { transitions, episodes };
        for e in &ds.episodes {
            validate_episode(ds.episode(e)).map_err(|err| bad(&err.to_string()))?;
        }
        Ok(ds)
    }
}

/// Runs `policy` for exactly `budget` transitions, resetting on termination or at the horizon.
fn roll_out(
    env: &mut AnyEnv,
    policy: &dyn BehaviorPolicy,
    budget: usize,
    provenance: Provenance,
    rng: &mut ChaCha8Rng,
    out: &mut OfflineDataset,
) -> Result<()> {
    let horizon = env.spec().horizon.max(1);
    let mut left = budget;
    while left > 0 {
        let mut state = env.reset(rng.random());
        let mut episode = Vec::new();
        for _ in 0..horizon.min(left) {
            let action = policy.sample(&state, rng)?;
            let action = env.spec().action_space.clamp(&action);
            let step = env.step(&action)?;
            episode.push(Transition {
                state,
                proposed_action: action.clone(),
                executed_action: action,
                next_state: step.next_state.clone(),
                reward: step.reward,
                cost: step.cost,
                done: step.done,
                corrected: false,
            });
            state = step.next_state;
            if step.done {
                break;
            }
        }
        left -= episode.len();
        out.push_episode(episode, provenance)?;
    }
    Ok(())
}

/// Collects `n_random` uniform-action transitions followed by `n_replay` transitions
/// from `task` (required when `n_replay > 0`). Deterministic given `seed`.
pub fn collect_offline(
    env: &mut AnyEnv,
    task: Option<&dyn BehaviorPolicy>,
    n_random: usize,
    n_replay: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ds = OfflineDataset::new();
    let uniform = UniformPolicy { action_space: env.spec().action_space.clone() };
    roll_out(env, &uniform, n_random, Provenance::Random, &mut rng, &mut ds)?;
    if n_replay > 0 {
        let task = task.ok_or_else(|| Error::InvalidArgument("task replay requested without a task policy".into()))?;
        roll_out(env, task, n_replay, Provenance::TaskReplay, &mut rng, &mut ds)?;
    }
    Ok(ds)
}

/// Keeps only the last `min(k, len)` transitions of every episode that ends in a
/// violation; other episodes pass through whole.
pub fn filter_pre_violation(dataset: &OfflineDataset, k: usize) -> Result<OfflineDataset> {
    if k == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    let mut out = OfflineDataset::new();
    for span in dataset.episodes() {
        let ep = dataset.episode(span);
        let failed = ep.last().is_some_and(|t| t.cost == 1);
        let keep = if failed { &ep[ep.len().saturating_sub(k)..] } else { ep };
        out.push_episode(keep.to_vec(), span.provenance)?;
    }
    Ok(out)
}

/// One transition for every non-failure state-action pair of a tabular model,
/// each stored as its own one-step episode.
pub fn full_coverage_dataset(smdp: &TabularSmdp) -> Result<OfflineDataset> {
    let mut ds = OfflineDataset::new();
    for s in (0..smdp.n_states()).filter(|&s| !smdp.is_fail(s)) {
        for a in 0..smdp.n_actions() {
            let cost = smdp.cost(s, a);
            let t = Transition {
                state: vec![s as f64],
                proposed_action: vec![a as f64],
                executed_action: vec![a as f64],
                next_state: vec![smdp.successor(s, a) as f64],
                reward: 0.0,
                cost,
                done: cost == 1,
                corrected: false,
            };
            ds.push_episode(vec![t], Provenance::Random)?;
        }
    }
    Ok(ds)
}
