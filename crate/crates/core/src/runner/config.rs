use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{tabularize, AnyEnv, CarBrakeEnv, CarBrakeParams, GridHazardEnv, GridLayout, PointLayout, PointMomentumEnv, TabularEnv, TabularModel};
use crate::online::{LearnerConfig, OnlineConfig};
use crate::oracle::TabularSmdp;
use crate::pretrain::{PretrainConfig, PretrainMethod};
use crate::{Error, Result};

/// Experiment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DeaRrl,
    Rrl,
    RrlMsdp,
    DearrlIql,
    Unshielded,
    /// Shield built from the exact tabular `Q*`.
    Oracle,
}

impl Method {
    pub fn pretrain_method(self) -> Option<PretrainMethod> {
        match self {
            Method::DeaRrl => Some(PretrainMethod::DeaRrl),
            Method::Rrl => Some(PretrainMethod::Rrl),
            Method::RrlMsdp => Some(PretrainMethod::RrlMsdp),
            Method::DearrlIql => Some(PretrainMethod::DearrlIql),
            Method::Unshielded | Method::Oracle => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::DeaRrl => "dea_rrl",
            Method::Rrl => "rrl",
            Method::RrlMsdp => "rrl_msdp",
            Method::DearrlIql => "dearrl_iql",
            Method::Unshielded => "unshielded",
            Method::Oracle => "oracle",
        }
    }
}

/// Shield threshold: a number, or `"auto"` for `gamma_safe^h_dead` of the tabular model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEpsilon", into = "RawEpsilon")]
pub enum Epsilon {
    Auto,
    Value(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawEpsilon {
    Number(f64),
    Word(String),
}

impl TryFrom<RawEpsilon> for Epsilon {
    type Error = String;
    fn try_from(raw: RawEpsilon) -> std::result::Result<Self, String> {
        match raw {
            RawEpsilon::Number(x) if x > 0.0 => Ok(Epsilon::Value(x)),
            RawEpsilon::Number(x) => Err(format!("epsilon {x} must be positive")),
            RawEpsilon::Word(w) if w == "auto" => Ok(Epsilon::Auto),
            RawEpsilon::Word(w) => Err(format!("epsilon must be a number or \"auto\", got {w:?}")),
        }
    }
}

impl From<Epsilon> for RawEpsilon {
    fn from(e: Epsilon) -> Self {
        match e {
            Epsilon::Auto => RawEpsilon::Word("auto".into()),
            Epsilon::Value(x) => RawEpsilon::Number(x),
        }
    }
}

fn default_bins() -> (usize, usize) {
    (50, 25)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Grid {
        #[serde(default = "GridLayout::standard")]
        layout: GridLayout,
        horizon: usize,
        gamma: f64,
        gamma_safe: f64,
    },
    Point {
        #[serde(default = "PointLayout::standard")]
        layout: PointLayout,
        horizon: usize,
        gamma: f64,
        gamma_safe: f64,
    },
    CarBrake {
        #[serde(default)]
        params: CarBrakeParams,
        /// Distance and velocity bins of the tabular model.
        #[serde(default = "default_bins")]
        bins: (usize, usize),
        horizon: usize,
        gamma: f64,
        gamma_safe: f64,
    },
    Chain {
        horizon: usize,
        gamma: f64,
        gamma_safe: f64,
    },
    Corridor {
        horizon: usize,
        gamma: f64,
        gamma_safe: f64,
    },
}

impl EnvConfig {
    pub fn build(&self) -> Result<AnyEnv> {
        let env = match self.clone() {
            EnvConfig::Grid { layout, horizon, gamma, gamma_safe } => {
                AnyEnv::Grid(GridHazardEnv::new(layout, horizon, gamma, gamma_safe)?)
            }
            EnvConfig::Point { layout, horizon, gamma, gamma_safe } => {
                AnyEnv::Point(PointMomentumEnv::new(layout, horizon, gamma, gamma_safe))
            }
            EnvConfig::CarBrake { params, horizon, gamma, gamma_safe, .. } => {
                AnyEnv::CarBrake(CarBrakeEnv::new(params, horizon, gamma, gamma_safe))
            }
            EnvConfig::Chain { horizon, gamma, gamma_safe } => {
                AnyEnv::Tabular(TabularEnv::new(TabularSmdp::three_state_chain(), horizon, gamma, gamma_safe))
            }
            EnvConfig::Corridor { horizon, gamma, gamma_safe } => {
                AnyEnv::Tabular(TabularEnv::new(TabularSmdp::two_step_corridor(), horizon, gamma, gamma_safe))
            }
        };
        crate::envs::Env::spec(&env).validate()?;
        Ok(env)
    }

    /// Exact tabular model, when the environment has one.
    pub fn tabular_model(&self, env: &AnyEnv) -> Option<TabularModel> {
        let bins = match self {
            EnvConfig::CarBrake { bins, .. } => *bins,
            _ => (0, 0),
        };
        tabularize(env, bins).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Transitions collected with uniform random actions.
    pub n_random: usize,
    /// Transitions replayed from an unshielded task learner's training run.
    pub n_replay: usize,
    /// Transitions kept before each violation.
    pub keep_before_violation: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_random: 100_000, n_replay: 100_000, keep_before_violation: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub n_episodes: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { n_episodes: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub methods: Vec<Method>,
    pub epsilons: Vec<f64>,
    /// Also run one unshielded arm per seed.
    pub include_unshielded: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { methods: vec![Method::DeaRrl, Method::Rrl], epsilons: vec![0.3, 0.5, 0.7], include_unshielded: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub epsilon: Epsilon,
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub pretrain: PretrainConfig,
    pub online: OnlineConfig,
    #[serde(default)]
    pub learner: LearnerConfig,
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

/// Overrides the configured output directory when set.
pub const OUTPUT_ENV_VAR: &str = "DEARRL_OUT";

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.eval.n_episodes == 0 {
            return bad("eval.n_episodes must be at least 1");
        }
        if self.data.keep_before_violation == 0 {
            return bad("data.keep_before_violation must be at least 1");
        }
        if self.method.pretrain_method().is_some() && self.data.n_random + self.data.n_replay == 0 {
            return bad("pretraining needs offline data");
        }
        if self.ablation.epsilons.iter().any(|e| !(*e > 0.0)) {
            return bad("ablation epsilons must be positive");
        }
        Ok(())
    }

    /// Output root after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV_VAR) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }
}
