//! Experiment orchestration: configs, seed loops, metrics and CSV/SVG reports.

mod config;
mod experiment;
mod metrics;
pub mod svg;

pub use config::{AblationConfig, DataConfig, EnvConfig, Epsilon, EvalConfig, ExperimentConfig, Method, OUTPUT_ENV_VAR};
pub use experiment::{
    ablation_grid, evaluate, learning_curves, offline_dataset, oracle_values, output_root, plug_and_play_eval,
    plug_experiment, pretrain_for, resolve_epsilon, run_experiment, stage_seed, train_and_evaluate, AblationArm,
    AblationReport, CurvePoint, EvalOutcome, ExperimentReport, FailureRecord, GreedyTask, PlugComparison,
    PlugSeedRow, SeedRun, PLUG_POLICY_SEED_OFFSET,
};
pub use metrics::{EvalRow, MetricsReport, ReportRow, SeedMetrics, TestMetrics, TrainMetrics};

#[cfg(test)]
mod tests;
