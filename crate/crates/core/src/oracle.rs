//! Exact dynamic programming on deterministic tabular safe MDPs.
//!
//! Values follow the masked backup `Q(s,a) = c + (1 - c) * gamma_safe * V(s')` with
//! failure states absorbing at `V = 1`.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::smdp::StateLabel;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 1_000_000;

/// Deterministic finite safe MDP: one successor per state-action pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSmdp {
    n_states: usize,
    n_actions: usize,
    successor: Vec<usize>,
    fail: Vec<bool>,
    initial: Vec<usize>,
}

impl TabularSmdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        successor: Vec<usize>,
        fail: Vec<bool>,
        initial: Vec<usize>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("empty state or action set".into()));
        }
        if successor.len() != n_states * n_actions {
            return Err(Error::ShapeMismatch { expected: n_states * n_actions, got: successor.len() });
        }
        if fail.len() != n_states {
            return Err(Error::ShapeMismatch { expected: n_states, got: fail.len() });
        }
        if let Some(&bad) = successor.iter().find(|&&s| s >= n_states) {
            return Err(Error::InvalidArgument(format!("successor index {bad} out of range")));
        }
        for s in (0..n_states).filter(|&s| fail[s]) {
            if (0..n_actions).any(|a| successor[s * n_actions + a] != s) {
                return Err(Error::InvalidArgument(format!("fail state {s} is not absorbing")));
            }
        }
        if !initial.iter().any(|&s| s < n_states && !fail[s]) {
            return Err(Error::InvalidArgument("no non-fail initial state".into()));
        }
        Ok(Self { n_states, n_actions, successor, fail, initial })
    }

    /// `s0 -> {s0, s1}`, `s1 -> s2`, `s2` failure.
    pub fn three_state_chain() -> Self {
        Self::new(3, 2, vec![0, 1, 2, 2, 2, 2], vec![false, false, true], vec![0])
            .expect("valid chain")
    }

    /// `s0 -> {s0, s1}`, `s1 -> s2 -> s3`, `s3` failure: a two-step dead-end corridor.
    pub fn two_step_corridor() -> Self {
        Self::new(4, 2, vec![0, 1, 2, 2, 3, 3, 3, 3], vec![false, false, false, true], vec![0])
            .expect("valid corridor")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn successor(&self, state: usize, action: usize) -> usize {
        self.successor[state * self.n_actions + action]
    }

    pub fn is_fail(&self, state: usize) -> bool {
        self.fail[state]
    }

    pub fn fail_mask(&self) -> &[bool] {
        &self.fail
    }

    pub fn initial_states(&self) -> &[usize] {
        &self.initial
    }

    /// Immediate cost of taking `action` in a non-failure `state`.
    pub fn cost(&self, state: usize, action: usize) -> u8 {
        u8::from(!self.fail[state] && self.fail[self.successor(state, action)])
    }

    /// One-step backup `c + (1 - c) * gamma * V(s')`; failure states stay at 1.
    fn backup(&self, state: usize, action: usize, gamma_safe: f64, v: &[f64]) -> f64 {
        if self.fail[state] {
            return 1.0;
        }
        let next = self.successor(state, action);
        if self.fail[next] {
            1.0
        } else {
            gamma_safe * v[next]
        }
    }

    /// Action values induced by a state-value vector.
    pub fn q_from_v(&self, v: &[f64], gamma_safe: f64) -> Vec<f64> {
        let mut q = vec![0.0; self.n_states * self.n_actions];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                q[s * self.n_actions + a] = self.backup(s, a, gamma_safe, v);
            }
        }
        q
    }
}

/// Exact optimal cost values and the state partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactValues {
    pub gamma_safe: f64,
    pub v_star: Vec<f64>,
    /// Row-major `[state][action]`.
    pub q_star: Vec<f64>,
    pub n_actions: usize,
    pub labels: Vec<StateLabel>,
    /// Longest number of steps to failure from each dead-end (0 elsewhere).
    pub escape: Vec<usize>,
    pub h_dead: usize,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

impl ExactValues {
    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.q_star[state * self.n_actions + action]
    }

    pub fn q_row(&self, state: usize) -> &[f64] {
        &self.q_star[state * self.n_actions..(state + 1) * self.n_actions]
    }

    /// First action minimising `Q*`.
    pub fn argmin_action(&self, state: usize) -> usize {
        argmin(self.q_row(state))
    }

    /// The theoretically tight threshold `gamma_safe^h_dead`.
    pub fn epsilon_star(&self) -> f64 {
        self.gamma_safe.powi(self.h_dead as i32)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["state".to_string(), "label".into(), "v_star".into(), "escape".into()];
        header.extend((0..self.n_actions).map(|a| format!("q_star_{a}")));
        w.write_record(&header)?;
        for s in 0..self.v_star.len() {
            let mut row = vec![
                s.to_string(),
                self.labels[s].as_str().to_string(),
                format!("{:?}", self.v_star[s]),
                self.escape[s].to_string(),
            ];
            row.extend(self.q_row(s).iter().map(|q| format!("{q:?}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Dead-end states by backward reachability (least fixpoint): a non-failure state is a
/// dead-end iff every action leads to a failure or dead-end state.
pub fn enumerate_dead_ends(smdp: &TabularSmdp) -> Vec<StateLabel> {
    let n = smdp.n_states;
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for s in 0..n {
        for a in 0..smdp.n_actions {
            preds[smdp.successor(s, a)].push(s);
        }
    }
    let mut remaining = vec![smdp.n_actions; n];
    let mut doomed = smdp.fail.clone();
    let mut queue: VecDeque<usize> = (0..n).filter(|&s| smdp.fail[s]).collect();
    while let Some(s) = queue.pop_front() {
        for &p in &preds[s] {
            if doomed[p] {
                continue;
            }
            remaining[p] -= 1;
            if remaining[p] == 0 {
                doomed[p] = true;
                queue.push_back(p);
            }
        }
    }
    (0..n)
        .map(|s| match (smdp.fail[s], doomed[s]) {
            (true, _) => StateLabel::Fail,
            (false, true) => StateLabel::DeadEnd,
            (false, false) => StateLabel::Safe,
        })
        .collect()
}

/// Per-state longest step count to failure inside the dead-end region.
pub fn escape_times(smdp: &TabularSmdp, labels: &[StateLabel]) -> Result<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Open,
        Done,
    }
    let n = smdp.n_states;
    if labels.len() != n {
        return Err(Error::ShapeMismatch { expected: n, got: labels.len() });
    }
    let mut escape = vec![0usize; n];
    let mut mark = vec![Mark::New; n];
    for root in (0..n).filter(|&s| labels[s] == StateLabel::DeadEnd) {
        if mark[root] == Mark::Done {
            continue;
        }
        // iterative post-order DFS over the dead-end subgraph
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Open;
        while let Some(&mut (s, ref mut next_action)) = stack.last_mut() {
            if *next_action == smdp.n_actions {
                let best = (0..smdp.n_actions)
                    .map(|a| {
                        let t = smdp.successor(s, a);
                        if labels[t] == StateLabel::Fail { 1 } else { 1 + escape[t] }
                    })
                    .max()
                    .unwrap_or(0);
                escape[s] = best;
                mark[s] = Mark::Done;
                stack.pop();
                continue;
            }
            let t = smdp.successor(s, *next_action);
            *next_action += 1;
            match labels[t] {
                StateLabel::Fail => {}
                StateLabel::Safe => {
                    return Err(Error::InvalidArgument(format!(
                        "dead-end state {s} has a safe successor {t}"
                    )))
                }
                StateLabel::DeadEnd => match mark[t] {
                    Mark::Done => {}
                    Mark::Open => return Err(Error::DeadEndCycle(t)),
                    Mark::New => {
                        mark[t] = Mark::Open;
                        stack.push((t, 0));
                    }
                },
            }
        }
    }
    Ok(escape)
}

/// Longest survival time after entering the dead-end region (0 without dead-ends).
pub fn compute_assumption_horizon(smdp: &TabularSmdp, labels: &[StateLabel]) -> Result<usize> {
    Ok(escape_times(smdp, labels)?.into_iter().max().unwrap_or(0))
}

/// Optimal cost values by synchronous value iteration to sup-norm tolerance `tol`.
pub fn value_iteration_optimal(smdp: &TabularSmdp, gamma_safe: f64, tol: f64) -> Result<ExactValues> {
    if !(0.0..1.0).contains(&gamma_safe) {
        return Err(Error::InvalidArgument(format!("gamma_safe {gamma_safe} not in [0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let n = smdp.n_states;
    let mut v: Vec<f64> = smdp.fail.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let mut next = v.clone();
    let mut residuals = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut residual: f64 = 0.0;
        for s in 0..n {
            let best = (0..smdp.n_actions)
                .map(|a| smdp.backup(s, a, gamma_safe, &v))
                .fold(f64::INFINITY, f64::min);
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut v, &mut next);
        residuals.push(residual);
        if residual < tol {
            break;
        }
        if iterations >= MAX_SWEEPS {
            return Err(Error::NoConvergence { what: "value iteration", iterations, residual });
        }
    }
    let labels = enumerate_dead_ends(smdp);
    let escape = escape_times(smdp, &labels)?;
    let h_dead = escape.iter().copied().max().unwrap_or(0);
    Ok(ExactValues {
        gamma_safe,
        q_star: smdp.q_from_v(&v, gamma_safe),
        v_star: v,
        n_actions: smdp.n_actions,
        labels,
        escape,
        h_dead,
        iterations,
        residuals,
    })
}

/// Cost value of a stationary stochastic policy given as per-state action distributions.
pub fn policy_cost_evaluation(
    smdp: &TabularSmdp,
    policy: &[Vec<f64>],
    gamma_safe: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if policy.len() != smdp.n_states {
        return Err(Error::ShapeMismatch { expected: smdp.n_states, got: policy.len() });
    }
    for (s, row) in policy.iter().enumerate() {
        if row.len() != smdp.n_actions {
            return Err(Error::ShapeMismatch { expected: smdp.n_actions, got: row.len() });
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidArgument(format!("policy row {s} is not a distribution")));
        }
    }
    if !(0.0..1.0).contains(&gamma_safe) {
        return Err(Error::InvalidArgument(format!("gamma_safe {gamma_safe} not in [0, 1)")));
    }
    let n = smdp.n_states;
    let mut v: Vec<f64> = smdp.fail.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
    let mut next = v.clone();
    for iteration in 1..=MAX_SWEEPS {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            let value: f64 = (0..smdp.n_actions)
                .map(|a| policy[s][a] * smdp.backup(s, a, gamma_safe, &v))
                .sum();
            residual = residual.max((value - v[s]).abs());
            next[s] = value;
        }
        std::mem::swap(&mut v, &mut next);
        if residual < tol {
            return Ok(v);
        }
        if iteration == MAX_SWEEPS {
            return Err(Error::NoConvergence { what: "policy evaluation", iterations: iteration, residual });
        }
    }
    unreachable!()
}

/// Per-(state, action) admissibility `Q(s,a) < epsilon` on non-failure states.
pub fn admissible_mask(q: &[f64], epsilon: f64) -> Vec<bool> {
    q.iter().map(|&v| v < epsilon).collect()
}

/// Outcome of exhaustively simulating the shielded tabular system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub epsilon: f64,
    pub safe_starts: usize,
    pub reachable_states: usize,
    pub checked_pairs: usize,
    pub corrected_pairs: usize,
    pub dead_end_entries: usize,
    pub fail_entries: usize,
    /// First offending `(state, task_action, executed_action, next_state)`.
    pub first_violation: Option<(usize, usize, usize, usize)>,
}

impl CertificationReport {
    pub fn unsafe_entries(&self) -> usize {
        self.dead_end_entries + self.fail_entries
    }

    pub fn passed(&self) -> bool {
        self.unsafe_entries() == 0
    }
}

impl fmt::Display for CertificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "shield certification at epsilon = {:.6e}", self.epsilon)?;
        writeln!(f, "  safe start states      : {}", self.safe_starts)?;
        writeln!(f, "  reachable safe states  : {}", self.reachable_states)?;
        writeln!(f, "  (state, task action)   : {}", self.checked_pairs)?;
        writeln!(f, "  corrected pairs        : {}", self.corrected_pairs)?;
        writeln!(f, "  dead-end entries       : {}", self.dead_end_entries)?;
        writeln!(f, "  failure entries        : {}", self.fail_entries)?;
        if let Some((s, a, e, t)) = self.first_violation {
            writeln!(f, "  first violation        : state {s}, task action {a}, executed {e} -> {t}")?;
        }
        write!(f, "  verdict                : {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Exhaustively simulates behaviour correction with `Q*` from every safe state under
/// every task action, counting entries into dead-end or failure states.
pub fn certify_shield(smdp: &TabularSmdp, values: &ExactValues, epsilon_safe: f64) -> CertificationReport {
    let n = smdp.n_states;
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for s in (0..n).filter(|&s| values.labels[s] == StateLabel::Safe) {
        seen[s] = true;
        queue.push_back(s);
    }
    let mut report = CertificationReport {
        epsilon: epsilon_safe,
        safe_starts: queue.len(),
        reachable_states: 0,
        checked_pairs: 0,
        corrected_pairs: 0,
        dead_end_entries: 0,
        fail_entries: 0,
        first_violation: None,
    };
    while let Some(s) = queue.pop_front() {
        report.reachable_states += 1;
        for task_action in 0..smdp.n_actions {
            report.checked_pairs += 1;
            let executed = if values.q(s, task_action) < epsilon_safe {
                task_action
            } else {
                report.corrected_pairs += 1;
                values.argmin_action(s)
            };
            let next = smdp.successor(s, executed);
            match values.labels[next] {
                StateLabel::Safe => {
                    if !seen[next] {
                        seen[next] = true;
                        queue.push_back(next);
                    }
                }
                label => {
                    if label == StateLabel::Fail {
                        report.fail_entries += 1;
                    } else {
                        report.dead_end_entries += 1;
                    }
                    report.first_violation.get_or_insert((s, task_action, executed, next));
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_labels_and_values() {
        let chain = TabularSmdp::three_state_chain();
        assert_eq!(
            enumerate_dead_ends(&chain),
            vec![StateLabel::Safe, StateLabel::DeadEnd, StateLabel::Fail]
        );
        let ex = value_iteration_optimal(&chain, 0.9, 1e-12).unwrap();
        assert_eq!(ex.v_star, vec![0.0, 1.0, 1.0]);
        assert_eq!(ex.h_dead, 1);
        assert_eq!(ex.q(0, 1), 0.9);
    }

    #[test]
    fn corridor_discounts_once() {
        let c = TabularSmdp::two_step_corridor();
        let ex = value_iteration_optimal(&c, 0.9, 1e-12).unwrap();
        assert!((ex.v_star[1] - 0.9).abs() < 1e-15);
        assert_eq!(ex.h_dead, 2);
        assert_eq!(ex.escape, vec![0, 2, 1, 0]);
    }

    #[test]
    fn all_fail_neighbours_make_a_dead_end() {
        // state 0 has 6 actions all leading to fail state 1
        let m = TabularSmdp::new(3, 6, vec![1; 6].into_iter().chain(vec![1; 6]).chain(vec![2; 6]).collect(),
            vec![false, true, false], vec![2]).unwrap();
        assert_eq!(enumerate_dead_ends(&m)[0], StateLabel::DeadEnd);
        assert_eq!(enumerate_dead_ends(&m)[2], StateLabel::Safe);
    }

    #[test]
    fn random_policy_on_chain_is_nine_elevenths() {
        let chain = TabularSmdp::three_state_chain();
        let uniform = vec![vec![0.5, 0.5]; 3];
        let v = policy_cost_evaluation(&chain, &uniform, 0.9, 1e-13).unwrap();
        assert!((v[0] - 9.0 / 11.0).abs() < 1e-10);
        assert_eq!(v[2], 1.0);
        assert!(policy_cost_evaluation(&chain, &vec![vec![0.5, 0.6]; 3], 0.9, 1e-9).is_err());
    }

    #[test]
    fn optimal_policy_evaluation_matches_value_iteration() {
        let c = TabularSmdp::two_step_corridor();
        let ex = value_iteration_optimal(&c, 0.9, 1e-12).unwrap();
        let greedy: Vec<Vec<f64>> = (0..4)
            .map(|s| {
                let mut row = vec![0.0; 2];
                row[ex.argmin_action(s)] = 1.0;
                row
            })
            .collect();
        let v = policy_cost_evaluation(&c, &greedy, 0.9, 1e-12).unwrap();
        for (a, b) in v.iter().zip(&ex.v_star) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn inconsistent_labels_are_rejected() {
        let chain = TabularSmdp::three_state_chain();
        // marking s0 as a dead-end gives it a self-loop that never fails
        let labels = vec![StateLabel::DeadEnd, StateLabel::DeadEnd, StateLabel::Fail];
        assert!(matches!(compute_assumption_horizon(&chain, &labels), Err(Error::DeadEndCycle(0))));
        let labels = vec![StateLabel::Safe, StateLabel::DeadEnd, StateLabel::Fail];
        assert_eq!(compute_assumption_horizon(&chain, &labels).unwrap(), 1);
    }

    #[test]
    fn certification_on_chain() {
        let chain = TabularSmdp::three_state_chain();
        let ex = value_iteration_optimal(&chain, 0.9, 1e-12).unwrap();
        let ok = certify_shield(&chain, &ex, 0.9);
        assert!(ok.passed(), "{ok}");
        assert_eq!(ok.corrected_pairs, 1);
        let vacuous = certify_shield(&chain, &ex, 1.1);
        assert_eq!(vacuous.dead_end_entries, 1);
        assert!(!vacuous.passed());
    }

    #[test]
    fn construction_errors() {
        assert!(TabularSmdp::new(2, 1, vec![0, 0], vec![false, true], vec![0]).is_err());
        assert!(TabularSmdp::new(2, 1, vec![1, 1], vec![false, true], vec![1]).is_err());
        assert!(TabularSmdp::new(2, 1, vec![5, 1], vec![false, true], vec![0]).is_err());
    }
}
