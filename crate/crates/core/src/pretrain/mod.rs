//! Offline stage: data collection and filtering, then joint training of the safety
//! critic and the recovery policy.
//!
//! Four variants share one loop and differ only in the critic target and the policy
//! extraction step:
//!
//! | method       | `Q_c` target                           | policy step                 |
//! |--------------|----------------------------------------|-----------------------------|
//! | `DeaRrl`     | `c + (1-d) g V_c(s')`, `V_c` by expectile | pathwise descent of `Q_c` |
//! | `DearrlIql`  | same                                   | advantage-weighted regression |
//! | `Rrl`        | `c + (1-d) g E_{a'~task} Q'_c(s',a')`  | pathwise descent of `Q_c`   |
//! | `RrlMsdp`    | `c + (1-d) g E_{a'~rec} Q'_c(s',a')`   | pathwise descent of `Q_c`   |

mod behavior;
mod critic;
mod dataset;
mod recovery;

pub use behavior::{BehaviorPolicy, ConstantPolicy, EpsilonMixture, TablePolicy, UniformPolicy};
pub use critic::{expectile_loss, CriticSetup, NetConfig, SafetyCritic};
pub use dataset::{
    collect_offline, filter_pre_violation, full_coverage_dataset, EpisodeSpan, OfflineDataset, Provenance,
};
pub use recovery::{RecoveryNet, RecoveryPolicy};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{Env, TabularModel};
use crate::funcapprox::{Adam, AdamConfig, Checkpoint, Mlp};
use crate::oracle::ExactValues;
use crate::smdp::Transition;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainMethod {
    DeaRrl,
    DearrlIql,
    Rrl,
    RrlMsdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_q: f64,
    pub lr_v: f64,
    pub lr_policy: f64,
    /// Learning rates decay linearly to this fraction of their initial value.
    pub lr_final_fraction: f64,
    pub expectile_tau: f64,
    pub target_rate: f64,
    pub critic: NetConfig,
    pub policy: NetConfig,
    pub awr_beta: f64,
    pub awr_max_weight: f64,
    pub log_every: usize,
    /// Abort when the `Q_c` loss stays above `watchdog_factor` times its initial value
    /// for `watchdog_patience` consecutive steps.
    pub watchdog_factor: f64,
    pub watchdog_patience: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            batch_size: 256,
            lr_q: 3e-4,
            lr_v: 3e-4,
            lr_policy: 3e-4,
            lr_final_fraction: 1.0,
            expectile_tau: 0.9,
            target_rate: 0.005,
            critic: NetConfig::default(),
            policy: NetConfig::default(),
            awr_beta: 10.0,
            awr_max_weight: 100.0,
            log_every: 1000,
            watchdog_factor: 10.0,
            watchdog_patience: 1000,
        }
    }
}

/// Exact reference used to score a critic during and after training.
#[derive(Debug, Clone, Copy)]
pub struct OracleProbe<'a> {
    pub model: &'a TabularModel,
    pub values: &'a ExactValues,
    pub epsilon: f64,
}

/// Agreement between a learned critic/recovery pair and the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleAgreement {
    /// `max |Q_learned - Q*|` over non-failure state-action pairs.
    pub q_sup_error: f64,
    /// Share of oracle-safe states with at least one learned-admissible action.
    pub admissible_coverage: f64,
    /// Share of oracle-safe states whose recovery action is `Q*`-optimal.
    pub recovery_agreement: f64,
}

impl OracleProbe<'_> {
    pub fn score(&self, critic: &SafetyCritic, recovery: &RecoveryPolicy) -> Result<OracleAgreement> {
        let smdp = &self.model.smdp;
        let mut sup: f64 = 0.0;
        let (mut safe, mut covered, mut agree) = (0usize, 0usize, 0usize);
        for s in (0..smdp.n_states()).filter(|&s| !smdp.is_fail(s)) {
            let state = self.model.state_value(s);
            let mut min_q = f64::INFINITY;
            for a in 0..smdp.n_actions() {
                let q = critic.q(&state, &self.model.action_value(a))?;
                sup = sup.max((q - self.values.q(s, a)).abs());
                min_q = min_q.min(q);
            }
            if self.values.labels[s] == crate::smdp::StateLabel::Safe {
                safe += 1;
                covered += usize::from(min_q < self.epsilon);
                let a = self.model.action_index(&recovery.mean_action(&state)?);
                agree += usize::from(self.values.q(s, a) <= self.values.v_star[s] + 1e-9);
            }
        }
        let frac = |n: usize| if safe == 0 { 1.0 } else { n as f64 / safe as f64 };
        Ok(OracleAgreement { q_sup_error: sup, admissible_coverage: frac(covered), recovery_agreement: frac(agree) })
    }
}

/// One line of the pretraining report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainLogRow {
    pub step: usize,
    pub q_loss: f64,
    pub v_loss: f64,
    pub policy_objective: f64,
    pub q_sup_error: Option<f64>,
    pub admissible_coverage: Option<f64>,
    pub recovery_agreement: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub method: PretrainMethod,
    pub critic: SafetyCritic,
    pub recovery: RecoveryPolicy,
    pub log: Vec<PretrainLogRow>,
}

impl Pretrained {
    pub fn write_log_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes critic networks, recovery policy and setup into one checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "method": self.method,
            "setup": self.critic.setup,
            "tau": self.critic.tau,
            "target_rate": self.critic.target_rate,
            "recovery": match &self.recovery.net {
                RecoveryNet::Gaussian(p) => serde_json::json!({"kind": "gaussian", "head": p.head, "features": p.features}),
                RecoveryNet::Categorical { features, .. } => serde_json::json!({"kind": "categorical", "features": features}),
            },
        });
        let policy_net = match &self.recovery.net {
            RecoveryNet::Gaussian(p) => &p.net,
            RecoveryNet::Categorical { net, .. } => net,
        };
        Checkpoint::new(meta)
            .with("q", &self.critic.q_net)
            .with("target_q", &self.critic.target_q)
            .with("v", &self.critic.v_net)
            .with("recovery", policy_net)
            .save(path)
    }

    /// Loads a checkpoint written by [`Pretrained::save`]; the recovery policy comes back frozen.
    pub fn load(path: &Path) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        let field = |k: &str| {
            ck.meta.get(k).cloned().ok_or_else(|| Error::Format { path: path.into(), reason: format!("missing {k}") })
        };
        let method: PretrainMethod = serde_json::from_value(field("method")?)?;
        let setup: CriticSetup = serde_json::from_value(field("setup")?)?;
        let q = ck.get("q")?.clone();
        let critic = SafetyCritic {
            setup,
            target_q: ck.expect("target_q", q.arch())?,
            q_net: q,
            v_net: ck.get("v")?.clone(),
            tau: serde_json::from_value(field("tau")?)?,
            target_rate: serde_json::from_value(field("target_rate")?)?,
        };
        let rec = field("recovery")?;
        let policy_net: Mlp = ck.get("recovery")?.clone();
        let net = match rec.get("kind").and_then(|k| k.as_str()) {
            Some("gaussian") => RecoveryNet::Gaussian(crate::funcapprox::GaussianPolicy {
                net: policy_net,
                head: serde_json::from_value(rec["head"].clone())?,
                features: serde_json::from_value(rec["features"].clone())?,
            }),
            Some("categorical") => RecoveryNet::Categorical {
                net: policy_net,
                features: serde_json::from_value(rec["features"].clone())?,
            },
            _ => return Err(Error::Format { path: path.into(), reason: "unknown recovery kind".into() }),
        };
        let mut recovery = RecoveryPolicy::from_net(net);
        recovery.freeze();
        Ok(Self { method, critic, recovery, log: Vec::new() })
    }
}

/// Critic setup derived from an environment.
pub fn critic_setup(env: &dyn Env) -> CriticSetup {
    CriticSetup {
        action_space: env.spec().action_space.clone(),
        features: env.features(),
        gamma_safe: env.spec().gamma_safe,
    }
}

fn expected_next_q(critic: &SafetyCritic, policy: &dyn BehaviorPolicy, t: &Transition, rng: &mut ChaCha8Rng) -> Result<f64> {
    if t.done {
        return Ok(f64::from(t.cost));
    }
    let next = match policy.probabilities(&t.next_state)? {
        Some(p) if critic.is_discrete() => {
            let q = critic.q_target_all(&t.next_state)?;
            p.iter().zip(&q).map(|(a, b)| a * b).sum()
        }
        _ => {
            let a = policy.sample(&t.next_state, rng)?;
            critic.q_target(&t.next_state, &a)?
        }
    };
    Ok(f64::from(t.cost) + critic.gamma_safe() * next)
}

/// The offline stage for any of the four methods. `task` is required for `Rrl`.
pub fn pretrain_method(
    method: PretrainMethod,
    dataset: &OfflineDataset,
    setup: &CriticSetup,
    task: Option<&dyn BehaviorPolicy>,
    cfg: &PretrainConfig,
    seed: u64,
    probe: Option<OracleProbe<'_>>,
) -> Result<Pretrained> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty offline dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if method == PretrainMethod::Rrl && task.is_none() {
        return Err(Error::InvalidArgument("the task-policy critic needs a task policy".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut critic = SafetyCritic::new(setup.clone(), &cfg.critic, cfg.expectile_tau, cfg.target_rate, &mut rng)?;
    let mut recovery = RecoveryPolicy::new(&setup.action_space, setup.features.clone(), &cfg.policy, &mut rng);
    let mut q_opt = Adam::new(AdamConfig::with_lr(cfg.lr_q), critic.q_net.params().len());
    let mut v_opt = Adam::new(AdamConfig::with_lr(cfg.lr_v), critic.v_net.params().len());
    let mut pi_opt = Adam::new(AdamConfig::with_lr(cfg.lr_policy), recovery.params().len());

    let data = dataset.transitions();
    let mut log = Vec::new();
    let mut initial_loss = None;
    let mut over = 0usize;
    let mut batch: Vec<&Transition> = Vec::with_capacity(cfg.batch_size);
    let mut running = (0.0, 0.0, 0.0, 0usize);
    for step in 0..cfg.steps {
        let decay = 1.0 - (1.0 - cfg.lr_final_fraction) * step as f64 / cfg.steps as f64;
        q_opt.config.lr = cfg.lr_q * decay;
        v_opt.config.lr = cfg.lr_v * decay;
        pi_opt.config.lr = cfg.lr_policy * decay;
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| &data[rng.random_range(0..data.len())]));
        let at = |e: Error| Error::AtStep { step, source: Box::new(e) };
        let (q_loss, v_loss) = match method {
            PretrainMethod::DeaRrl | PretrainMethod::DearrlIql => {
                let q = critic.update_q(&mut q_opt, &batch).map_err(at)?;
                let v = critic.update_v(&mut v_opt, &batch).map_err(at)?;
                (q, v)
            }
            PretrainMethod::Rrl | PretrainMethod::RrlMsdp => {
                let source: &dyn BehaviorPolicy = match method {
                    PretrainMethod::Rrl => task.expect("checked above"),
                    _ => &recovery,
                };
                let targets = batch
                    .iter()
                    .map(|t| expected_next_q(&critic, source, t, &mut rng))
                    .collect::<Result<Vec<_>>>()
                    .map_err(at)?;
                (critic.fit_q(&mut q_opt, &batch, &targets).map_err(at)?, 0.0)
            }
        };
        critic.soft_update_target();
        let objective = match method {
            PretrainMethod::DearrlIql => recovery
                .update_awr(&critic, &mut pi_opt, &batch, cfg.awr_beta, cfg.awr_max_weight)
                .map_err(at)?,
            _ => {
                let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
                recovery.update_pathwise(&critic, &mut pi_opt, &states, &mut rng).map_err(at)?
            }
        };

        let init = *initial_loss.get_or_insert(q_loss.max(1e-8));
        over = if q_loss > cfg.watchdog_factor * init { over + 1 } else { 0 };
        if over >= cfg.watchdog_patience {
            return Err(Error::Divergence { step, loss: q_loss });
        }
        running = (running.0 + q_loss, running.1 + v_loss, running.2 + objective, running.3 + 1);
        if cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps) {
            let n = running.3 as f64;
            let agreement = probe.map(|p| p.score(&critic, &recovery)).transpose()?;
            log.push(PretrainLogRow {
                step: step + 1,
                q_loss: running.0 / n,
                v_loss: running.1 / n,
                policy_objective: running.2 / n,
                q_sup_error: agreement.map(|a| a.q_sup_error),
                admissible_coverage: agreement.map(|a| a.admissible_coverage),
                recovery_agreement: agreement.map(|a| a.recovery_agreement),
            });
            running = (0.0, 0.0, 0.0, 0);
        }
    }
    recovery.freeze();
    Ok(Pretrained { method, critic, recovery, log })
}

/// Offline training of the optimal safety critic and its recovery policy.
pub fn pretrain(
    dataset: &OfflineDataset,
    setup: &CriticSetup,
    cfg: &PretrainConfig,
    seed: u64,
    probe: Option<OracleProbe<'_>>,
) -> Result<Pretrained> {
    pretrain_method(PretrainMethod::DeaRrl, dataset, setup, None, cfg, seed, probe)
}

/// Baseline whose critic evaluates a fixed task policy and whose recovery policy
/// greedily minimises that critic.
pub fn rrl_baseline_pretrain(
    dataset: &OfflineDataset,
    setup: &CriticSetup,
    task: &dyn BehaviorPolicy,
    cfg: &PretrainConfig,
    seed: u64,
    probe: Option<OracleProbe<'_>>,
) -> Result<Pretrained> {
    pretrain_method(PretrainMethod::Rrl, dataset, setup, Some(task), cfg, seed, probe)
}
