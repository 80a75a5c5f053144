use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Epsilon, ExperimentConfig, Method};
use super::metrics::{EvalRow, MetricsReport, ReportRow, SeedMetrics, TestMetrics, TrainMetrics};
use super::svg::{chart, Panel, Series};
use crate::envs::{AnyEnv, Env, TabularModel};
use crate::online::{train_online, OnlineConfig, OnlineTrace, Shield, ShieldKind, TaskLearner};
use crate::oracle::{value_iteration_optimal, ExactValues};
use crate::pretrain::{
    collect_offline, critic_setup, filter_pre_violation, pretrain_method, BehaviorPolicy, OfflineDataset,
    OracleProbe, Pretrained, Provenance, UniformPolicy,
};
use crate::smdp::Transition;
use crate::{Error, Result};

/// Independent random stream for one stage of one seed.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stage.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

const STAGE_RANDOM_DATA: u64 = 1;
const STAGE_REPLAY_LEARNER: u64 = 2;
const STAGE_REPLAY_RUN: u64 = 3;
const STAGE_PRETRAIN: u64 = 4;
const STAGE_LEARNER: u64 = 5;
const STAGE_ONLINE: u64 = 6;
const STAGE_EVAL: u64 = 7;

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Deterministic (mean or greedy) action of a trained task learner.
pub struct GreedyTask<'a>(pub &'a TaskLearner);

impl BehaviorPolicy for GreedyTask<'_> {
    fn sample(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.0.act(state, false, usize::MAX, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub rows: Vec<EvalRow>,
    pub metrics: TestMetrics,
}

/// Runs `n_episodes` test episodes of `policy`, corrected by `shield` when given.
pub fn evaluate(
    policy: &dyn BehaviorPolicy,
    shield: Option<&Shield>,
    env: &mut AnyEnv,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalOutcome> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("need at least one test episode".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let horizon = env.spec().horizon;
    let space = env.spec().action_space.clone();
    let mut rows = Vec::new();
    for episode in 0..n_episodes {
        let mut state = env.reset(rand::Rng::random(&mut rng));
        for step in 0..horizon {
            let proposed = space.clamp(&policy.sample(&state, &mut rng)?);
            let (action, corrected) = match shield {
                Some(s) => s.behavior_correct(&state, &proposed)?,
                None => (proposed, false),
            };
            let r = env.step(&action)?;
            rows.push(EvalRow { episode, step, reward: r.reward, cost: r.cost, corrected });
            state = r.next_state;
            if r.done {
                break;
            }
        }
    }
    let metrics = TestMetrics::from_rows(&rows);
    Ok(EvalOutcome { rows, metrics })
}

/// Offline data for one seed: uniform-random episodes plus the training run of an
/// unshielded task learner, then the pre-violation window filter.
pub fn offline_dataset(cfg: &ExperimentConfig, env: &AnyEnv, seed: u64) -> Result<OfflineDataset> {
    let mut env = env.clone();
    let mut ds = collect_offline(&mut env, None, cfg.data.n_random, 0, stage_seed(seed, STAGE_RANDOM_DATA))?;
    if cfg.data.n_replay > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, STAGE_REPLAY_LEARNER));
        let mut learner = TaskLearner::for_env(&env, &cfg.learner, &mut rng)?;
        let run = OnlineConfig { steps: cfg.data.n_replay, keep_transitions: true, ..cfg.online.clone() };
        let trace = train_online(&mut env, None, &mut learner, &run, stage_seed(seed, STAGE_REPLAY_RUN))?;
        for episode in split_episodes(&trace) {
            ds.push_episode(episode, Provenance::TaskReplay)?;
        }
    }
    filter_pre_violation(&ds, cfg.data.keep_before_violation)
}

fn split_episodes(trace: &OnlineTrace) -> Vec<Vec<Transition>> {
    let mut out: Vec<Vec<Transition>> = Vec::new();
    let mut current = None;
    for (row, t) in trace.rows.iter().zip(&trace.transitions) {
        if current != Some(row.episode) {
            out.push(Vec::new());
            current = Some(row.episode);
        }
        out.last_mut().expect("pushed above").push(t.clone());
    }
    out
}

/// Exact model and values of a tabular environment.
pub fn oracle_values(cfg: &ExperimentConfig, env: &AnyEnv) -> Result<Option<(TabularModel, ExactValues)>> {
    match cfg.env.tabular_model(env) {
        None => Ok(None),
        Some(model) => {
            let values = value_iteration_optimal(&model.smdp, env.spec().gamma_safe, 1e-12)?;
            Ok(Some((model, values)))
        }
    }
}

pub fn resolve_epsilon(epsilon: Epsilon, oracle: Option<&(TabularModel, ExactValues)>) -> Result<f64> {
    match (epsilon, oracle) {
        (Epsilon::Value(x), _) => Ok(x),
        (Epsilon::Auto, Some((_, values))) => Ok(values.epsilon_star()),
        (Epsilon::Auto, None) => Err(Error::Config("epsilon = \"auto\" needs an environment with a tabular model".into())),
    }
}

/// Offline stage of a shielded method; the task-policy critic evaluates uniform actions.
pub fn pretrain_for(
    cfg: &ExperimentConfig,
    method: Method,
    env: &AnyEnv,
    dataset: &OfflineDataset,
    seed: u64,
    oracle: Option<&(TabularModel, ExactValues)>,
    epsilon: f64,
) -> Result<Pretrained> {
    let pm = method
        .pretrain_method()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no offline stage", method.as_str())))?;
    let setup = critic_setup(env);
    let uniform = UniformPolicy { action_space: env.spec().action_space.clone() };
    let probe = oracle.map(|(model, values)| OracleProbe { model, values, epsilon });
    pretrain_method(pm, dataset, &setup, Some(&uniform), &cfg.pretrain, stage_seed(seed, STAGE_PRETRAIN), probe)
}

/// Everything one (arm, seed) run produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trace: OnlineTrace,
    pub eval: EvalOutcome,
    pub metrics: SeedMetrics,
    pub learner: TaskLearner,
}

/// Online training under `shield`, then deterministic evaluation under the same shield.
pub fn train_and_evaluate(cfg: &ExperimentConfig, env: &AnyEnv, shield: Option<&Shield>, seed: u64) -> Result<SeedRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(stage_seed(seed, STAGE_LEARNER));
    let mut learner = TaskLearner::for_env(env, &cfg.learner, &mut rng)?;
    let mut train_env = env.clone();
    let trace = train_online(&mut train_env, shield, &mut learner, &cfg.online, stage_seed(seed, STAGE_ONLINE))?;
    let mut eval_env = env.clone();
    let eval = evaluate(&GreedyTask(&learner), shield, &mut eval_env, cfg.eval.n_episodes, stage_seed(seed, STAGE_EVAL))?;
    let metrics = SeedMetrics::new(seed, TrainMetrics::from_rows(&trace.rows), eval.metrics);
    Ok(SeedRun { seed, trace, eval, metrics, learner })
}

fn write_seed_outputs(dir: &Path, run: &SeedRun, pretrained: Option<&Pretrained>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    run.trace.write_csv(&dir.join("train_trace.csv"))?;
    run.trace.write_episodes_csv(&dir.join("train_episodes.csv"))?;
    write_csv(&dir.join("eval_trace.csv"), &run.eval.rows)?;
    write_csv(&dir.join("metrics.csv"), &[run.metrics])?;
    if let Some(p) = pretrained {
        p.write_log_csv(&dir.join("pretrain_log.csv"))?;
        p.save(&dir.join("shield.ckpt"))?;
    }
    Ok(())
}

/// A seed that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

/// Mean and spread across seeds of one binned learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub arm: String,
    pub step: usize,
    pub reward: f64,
    pub reward_low: f64,
    pub reward_high: f64,
    pub violation_rate: f64,
    pub violation_low: f64,
    pub violation_high: f64,
    pub correction_ratio: f64,
    pub correction_low: f64,
    pub correction_high: f64,
}

/// Per-bin episode return, episode violation rate and step correction ratio of one trace.
/// Bins without a finished episode carry the previous value forward.
fn binned(trace: &OnlineTrace, total: usize, bins: usize) -> Vec<[f64; 3]> {
    let width = total.div_ceil(bins).max(1);
    let mut ret = vec![(0.0, 0usize); bins];
    let mut vio = vec![0usize; bins];
    let mut corr = vec![(0usize, 0usize); bins];
    for r in &trace.rows {
        let b = (r.step / width).min(bins - 1);
        corr[b].0 += usize::from(r.corrected);
        corr[b].1 += 1;
    }
    let mut end = 0usize;
    for e in &trace.episodes {
        end += e.steps;
        let b = ((end - 1) / width).min(bins - 1);
        ret[b].0 += e.episode_return;
        ret[b].1 += 1;
        vio[b] += usize::from(e.violated);
    }
    let mut last = [0.0, 0.0];
    (0..bins)
        .map(|b| {
            if ret[b].1 > 0 {
                last = [ret[b].0 / ret[b].1 as f64, vio[b] as f64 / ret[b].1 as f64];
            }
            let c = if corr[b].1 > 0 { corr[b].0 as f64 / corr[b].1 as f64 } else { 0.0 };
            [last[0], last[1], c]
        })
        .collect()
}

pub fn learning_curves(arm: &str, traces: &[&OnlineTrace], total_steps: usize, bins: usize) -> Vec<CurvePoint> {
    let bins = bins.max(1);
    let per: Vec<Vec<[f64; 3]>> = traces.iter().map(|t| binned(t, total_steps, bins)).collect();
    let width = total_steps.div_ceil(bins).max(1);
    (0..bins)
        .map(|b| {
            let stat = |k: usize| {
                let xs: Vec<f64> = per.iter().map(|p| p[b][k]).collect();
                let n = xs.len().max(1) as f64;
                let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (xs.iter().sum::<f64>() / n, if xs.is_empty() { 0.0 } else { lo }, if xs.is_empty() { 0.0 } else { hi })
            };
            let (r, rl, rh) = stat(0);
            let (v, vl, vh) = stat(1);
            let (c, cl, ch) = stat(2);
            CurvePoint {
                arm: arm.into(),
                step: ((b + 1) * width).min(total_steps),
                reward: r,
                reward_low: rl,
                reward_high: rh,
                violation_rate: v,
                violation_low: vl,
                violation_high: vh,
                correction_ratio: c,
                correction_low: cl,
                correction_high: ch,
            }
        })
        .collect()
}

fn curve_chart(curves: &[Vec<CurvePoint>]) -> String {
    let series = |f: fn(&CurvePoint) -> (f64, f64, f64)| -> Vec<Series> {
        curves
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| Series {
                name: c[0].arm.clone(),
                points: c.iter().map(|p| { let (m, l, h) = f(p); (p.step as f64, m, l, h) }).collect(),
            })
            .collect()
    };
    chart(&[
        Panel { title: "episode return".into(), x_label: "training step".into(), series: series(|p| (p.reward, p.reward_low, p.reward_high)) },
        Panel { title: "violation rate".into(), x_label: "training step".into(), series: series(|p| (p.violation_rate, p.violation_low, p.violation_high)) },
        Panel { title: "correction ratio".into(), x_label: "training step".into(), series: series(|p| (p.correction_ratio, p.correction_low, p.correction_high)) },
    ])
}

const CURVE_BINS: usize = 20;

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub arm: String,
    pub epsilon: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub failures: Vec<FailureRecord>,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && self.metrics.is_some()
    }
}

/// The shield of `method` at `epsilon`, pretraining when needed.
fn shield_for(
    cfg: &ExperimentConfig,
    method: Method,
    env: &AnyEnv,
    dataset: Option<&OfflineDataset>,
    seed: u64,
    oracle: Option<&(TabularModel, ExactValues)>,
    epsilon: f64,
) -> Result<(Option<Shield>, Option<Pretrained>)> {
    match method {
        Method::Unshielded => Ok((None, None)),
        Method::Oracle => {
            let (model, values) = oracle.ok_or_else(|| Error::Config("the oracle arm needs a tabular environment".into()))?;
            Ok((Some(Shield::oracle(model.clone(), values.clone(), epsilon)?), None))
        }
        _ => {
            let ds = dataset.ok_or_else(|| Error::InvalidArgument("missing offline data".into()))?;
            let p = pretrain_for(cfg, method, env, ds, seed, oracle, epsilon)?;
            Ok((Some(Shield::from_pretrained(&p, epsilon)?), Some(p)))
        }
    }
}

fn arm_name(method: Method, epsilon: Option<f64>) -> String {
    match epsilon {
        Some(e) => format!("{}_eps{e}", method.as_str()),
        None => method.as_str().to_string(),
    }
}

/// Runs `cfg.method` for every seed and writes traces, metrics and learning curves under `out`.
/// A failing seed is recorded and the remaining seeds still run.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    let env = cfg.env.build()?;
    let oracle = oracle_values(cfg, &env)?;
    let epsilon = match cfg.method {
        Method::Unshielded => None,
        _ => Some(resolve_epsilon(cfg.epsilon, oracle.as_ref())?),
    };
    let arm = cfg.method.as_str().to_string();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let attempt = || -> Result<SeedRun> {
            let dataset = match cfg.method.pretrain_method() {
                Some(_) => Some(offline_dataset(cfg, &env, seed)?),
                None => None,
            };
            let eps = epsilon.unwrap_or(1.0);
            let (shield, pre) = shield_for(cfg, cfg.method, &env, dataset.as_ref(), seed, oracle.as_ref(), eps)?;
            let run = train_and_evaluate(cfg, &env, shield.as_ref(), seed)?;
            write_seed_outputs(&out.join(&arm).join(format!("seed_{seed}")), &run, pre.as_ref())?;
            Ok(run)
        };
        match attempt() {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(FailureRecord { arm: arm.clone(), seed, error: e.to_string() }),
        }
    }
    finish_arm(cfg, out, &arm, cfg.method, epsilon, &runs)?;
    if !failures.is_empty() {
        write_csv(&out.join("failures.csv"), &failures)?;
    }
    let metrics = (!runs.is_empty()).then(|| MetricsReport::from_seeds(runs.iter().map(|r| r.metrics).collect()));
    Ok(ExperimentReport { arm, epsilon, metrics, failures })
}

fn finish_arm(cfg: &ExperimentConfig, out: &Path, arm: &str, method: Method, epsilon: Option<f64>, runs: &[SeedRun]) -> Result<Vec<CurvePoint>> {
    if runs.is_empty() {
        return Ok(Vec::new());
    }
    let report = MetricsReport::from_seeds(runs.iter().map(|r| r.metrics).collect());
    let dir = out.join(arm);
    write_csv(&dir.join("metrics.csv"), &ReportRow::rows(arm, method.as_str(), epsilon, &report))?;
    let traces: Vec<&OnlineTrace> = runs.iter().map(|r| &r.trace).collect();
    let curves = learning_curves(arm, &traces, cfg.online.steps, CURVE_BINS);
    write_csv(&dir.join("learning_curves.csv"), &curves)?;
    std::fs::write(dir.join("learning_curves.svg"), curve_chart(std::slice::from_ref(&curves)))?;
    Ok(curves)
}

/// One arm of an ablation grid; `metrics` is `None` when every seed failed.
#[derive(Debug, Clone)]
pub struct AblationArm {
    pub method: Method,
    pub epsilon: Option<f64>,
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub arms: Vec<AblationArm>,
    pub failures: Vec<FailureRecord>,
}

impl AblationReport {
    pub fn arm(&self, method: Method, epsilon: Option<f64>) -> Option<&MetricsReport> {
        self.arms
            .iter()
            .find(|a| a.method == method && a.epsilon == epsilon)
            .and_then(|a| a.metrics.as_ref())
    }

    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && self.arms.iter().all(|a| a.metrics.is_some())
    }
}

/// Every method of `cfg.ablation` at every threshold, plus an unshielded arm when
/// configured. Offline data is shared across methods and pretraining across thresholds
/// within a seed.
pub fn ablation_grid(cfg: &ExperimentConfig, epsilons: &[f64], out: &Path) -> Result<AblationReport> {
    cfg.validate()?;
    if epsilons.len() < 2 {
        return Err(Error::InvalidArgument("an ablation needs at least two thresholds".into()));
    }
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("thresholds must be positive".into()));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    let env = cfg.env.build()?;
    let oracle = oracle_values(cfg, &env)?;

    let mut arms: Vec<(Method, Option<f64>)> = Vec::new();
    for &m in &cfg.ablation.methods {
        if m != Method::Unshielded {
            arms.extend(epsilons.iter().map(|&e| (m, Some(e))));
        }
    }
    if cfg.ablation.include_unshielded || cfg.ablation.methods.contains(&Method::Unshielded) {
        arms.push((Method::Unshielded, None));
    }
    let mut runs: BTreeMap<String, Vec<SeedRun>> = BTreeMap::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let needs_data = arms.iter().any(|(m, _)| m.pretrain_method().is_some());
        let dataset = if needs_data {
            match offline_dataset(cfg, &env, seed) {
                Ok(d) => Some(d),
                Err(e) => {
                    for &(m, eps) in &arms {
                        if m.pretrain_method().is_some() {
                            failures.push(FailureRecord { arm: arm_name(m, eps), seed, error: e.to_string() });
                        }
                    }
                    None
                }
            }
        } else {
            None
        };
        let mut pretrained: BTreeMap<&'static str, std::result::Result<Pretrained, String>> = BTreeMap::new();
        for &(method, eps) in &arms {
            let name = arm_name(method, eps);
            let mut attempt = || -> Result<SeedRun> {
                let shield = match method {
                    Method::Unshielded => None,
                    Method::Oracle => shield_for(cfg, method, &env, None, seed, oracle.as_ref(), eps.unwrap_or(1.0))?.0,
                    _ => {
                        let ds = dataset.as_ref().ok_or_else(|| Error::InvalidArgument("offline data failed".into()))?;
                        let first_eps = epsilons[0];
                        let p = pretrained
                            .entry(method.as_str())
                            .or_insert_with(|| pretrain_for(cfg, method, &env, ds, seed, oracle.as_ref(), first_eps).map_err(|e| e.to_string()))
                            .as_ref()
                            .map_err(|e| Error::InvalidArgument(e.clone()))?;
                        Some(Shield::from_pretrained(p, eps.unwrap_or(1.0))?)
                    }
                };
                let run = train_and_evaluate(cfg, &env, shield.as_ref(), seed)?;
                let pre = pretrained.get(method.as_str()).and_then(|p| p.as_ref().ok());
                write_seed_outputs(&out.join(&name).join(format!("seed_{seed}")), &run, pre)?;
                Ok(run)
            };
            if dataset.is_none() && method.pretrain_method().is_some() {
                continue;
            }
            match attempt() {
                Ok(run) => runs.entry(name).or_default().push(run),
                Err(e) => failures.push(FailureRecord { arm: name, seed, error: e.to_string() }),
            }
        }
    }

    let mut report_rows = Vec::new();
    let mut all_curves = Vec::new();
    let mut out_arms = Vec::new();
    for &(method, eps) in &arms {
        let name = arm_name(method, eps);
        let seed_runs = runs.get(&name).map(Vec::as_slice).unwrap_or(&[]);
        all_curves.push(finish_arm(cfg, out, &name, method, eps, seed_runs)?);
        let metrics = (!seed_runs.is_empty()).then(|| MetricsReport::from_seeds(seed_runs.iter().map(|r| r.metrics).collect()));
        if let Some(m) = &metrics {
            report_rows.extend(ReportRow::rows(&name, method.as_str(), eps, m));
        }
        out_arms.push(AblationArm { method, epsilon: eps, metrics });
    }
    write_csv(&out.join("ablation.csv"), &report_rows)?;
    if !failures.is_empty() {
        write_csv(&out.join("failures.csv"), &failures)?;
    }
    let report = AblationReport { arms: out_arms, failures };
    std::fs::write(out.join("ablation.svg"), ablation_chart(&report, epsilons))?;
    std::fs::write(out.join("learning_curves.svg"), curve_chart(&all_curves))?;
    Ok(report)
}

fn ablation_chart(report: &AblationReport, epsilons: &[f64]) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for a in &report.arms {
        if !methods.contains(&a.method) {
            methods.push(a.method);
        }
    }
    let panel = |title: &str, f: fn(&MetricsReport) -> f64| {
        let series = methods
            .iter()
            .map(|&m| {
                let points = epsilons
                    .iter()
                    .filter_map(|&e| {
                        let key = if m == Method::Unshielded { None } else { Some(e) };
                        report.arm(m, key).map(|r| {
                            let ys: Vec<f64> = r.per_seed.iter().map(|s| {
                                f(&MetricsReport::from_seeds(vec![*s]))
                            }).collect();
                            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
                            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            (e, f(r), lo, hi)
                        })
                    })
                    .collect();
                Series { name: m.as_str().into(), points }
            })
            .collect();
        Panel { title: title.into(), x_label: "threshold".into(), series }
    };
    chart(&[panel("ACR", |r| r.acr), panel("AVR", |r| r.avr), panel("ARR", |r| r.arr)])
}

/// Shielded and unshielded test metrics of one external policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugComparison {
    pub unshielded: TestMetrics,
    pub shielded: TestMetrics,
}

/// Attaches `shield` to a policy it was not trained with and evaluates both variants
/// on the same episode seeds.
pub fn plug_and_play_eval(
    shield: &Shield,
    policy: &dyn BehaviorPolicy,
    env: &AnyEnv,
    n_episodes: usize,
    seed: u64,
) -> Result<PlugComparison> {
    let space = &env.spec().action_space;
    if let ShieldKind::Learned { critic, .. } = shield.kind() {
        if &critic.setup.action_space != space {
            return Err(Error::InvalidArgument("shield and environment action spaces differ".into()));
        }
        let probe = env.clone().reset(seed);
        critic.setup.features.apply(&probe)?;
    }
    let unshielded = evaluate(policy, None, &mut env.clone(), n_episodes, seed)?.metrics;
    let shielded = evaluate(policy, Some(shield), &mut env.clone(), n_episodes, seed)?.metrics;
    Ok(PlugComparison { unshielded, shielded })
}

/// One seed of a plug-and-play study: the shield's offline seed and the policy's
/// training seed differ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugSeedRow {
    pub shield_seed: u64,
    pub policy_seed: u64,
    pub unshielded_acr: f64,
    pub unshielded_avr: f64,
    pub shielded_acr: f64,
    pub shielded_avr: f64,
    pub shielded_arr: f64,
}

/// Offset between a plug-and-play shield seed and its external policy's seed.
pub const PLUG_POLICY_SEED_OFFSET: u64 = 7919;

/// Pretrains `cfg.method`'s shield per seed, trains an unshielded policy on another seed,
/// and compares both evaluations. Writes `plug.csv` under `out`.
pub fn plug_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<PlugSeedRow>, Vec<FailureRecord>)> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let env = cfg.env.build()?;
    let oracle = oracle_values(cfg, &env)?;
    let epsilon = resolve_epsilon(cfg.epsilon, oracle.as_ref())?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &seed in &cfg.seeds {
        let attempt = || -> Result<PlugSeedRow> {
            let ds = offline_dataset(cfg, &env, seed)?;
            let (shield, pre) = shield_for(cfg, cfg.method, &env, Some(&ds), seed, oracle.as_ref(), epsilon)?;
            let shield = shield.ok_or_else(|| Error::Config("plug-and-play needs a shielded method".into()))?;
            let policy_seed = seed.wrapping_add(PLUG_POLICY_SEED_OFFSET);
            let run = train_and_evaluate(cfg, &env, None, policy_seed)?;
            let cmp = plug_and_play_eval(&shield, &GreedyTask(&run.learner), &env, cfg.eval.n_episodes, stage_seed(seed, STAGE_EVAL))?;
            if let Some(p) = pre {
                p.save(&out.join(format!("shield_seed_{seed}.ckpt")))?;
            }
            Ok(PlugSeedRow {
                shield_seed: seed,
                policy_seed,
                unshielded_acr: cmp.unshielded.acr,
                unshielded_avr: cmp.unshielded.avr,
                shielded_acr: cmp.shielded.acr,
                shielded_avr: cmp.shielded.avr,
                shielded_arr: cmp.shielded.test_arr,
            })
        };
        match attempt() {
            Ok(r) => rows.push(r),
            Err(e) => failures.push(FailureRecord { arm: "plug".into(), seed, error: e.to_string() }),
        }
    }
    write_csv(&out.join("plug.csv"), &rows)?;
    if !failures.is_empty() {
        write_csv(&out.join("failures.csv"), &failures)?;
    }
    Ok((rows, failures))
}

/// `out` unless the output override variable is set.
pub fn output_root(cfg: &ExperimentConfig, cli_out: Option<PathBuf>) -> PathBuf {
    cli_out.unwrap_or_else(|| cfg.resolved_output_dir())
}
