use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dearrl::envs::Env;
use dearrl::online::Shield;
use dearrl::oracle::{certify_shield, enumerate_dead_ends, value_iteration_optimal};
use dearrl::pretrain::{BehaviorPolicy, ConstantPolicy, Pretrained, UniformPolicy};
use dearrl::runner::{
    ablation_grid, evaluate, offline_dataset, oracle_values, output_root, plug_experiment, pretrain_for,
    resolve_epsilon, run_experiment, ExperimentConfig,
};
use dearrl::smdp::StateLabel;

#[derive(Parser)]
#[command(name = "dearrl", about = "Dead-end aware recovery RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config and the DEARRL_OUT variable.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect and filter offline data for every seed.
    Collect(Common),
    /// Collect data and pretrain the configured method's critic and recovery policy.
    Pretrain(Common),
    /// Full run of the configured method: offline stage, online training, evaluation.
    Train(Common),
    /// Evaluate a fixed policy, optionally behind a saved or exact shield.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// `uniform` or comma-separated constant action, e.g. `1.0` or `0.5,-0.2`.
        #[arg(long, default_value = "uniform")]
        policy: String,
        /// Checkpoint written by `pretrain`.
        #[arg(long, conflicts_with = "oracle_shield")]
        shield: Option<PathBuf>,
        /// Shield with the exact tabular values.
        #[arg(long)]
        oracle_shield: bool,
    },
    /// Exact values, dead-end labels and shield certification of a tabular environment.
    Oracle(Common),
    /// Threshold ablation over the config's `[ablation]` methods and thresholds.
    Ablate(Common),
    /// Attach pretrained shields to independently trained unshielded policies.
    Plug(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    let out = output_root(&cfg, common.out.clone());
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn parse_policy(spec: &str, env: &dearrl::envs::AnyEnv) -> Result<Box<dyn BehaviorPolicy>> {
    if spec == "uniform" {
        return Ok(Box::new(UniformPolicy { action_space: env.spec().action_space.clone() }));
    }
    let action: Vec<f64> = spec
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("policy {spec:?} is neither `uniform` nor a list of numbers"))?;
    if action.len() != env.spec().action_dim() {
        bail!("constant action has {} entries, the environment expects {}", action.len(), env.spec().action_dim());
    }
    Ok(Box::new(ConstantPolicy(action)))
}

fn collect(common: &Common) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let env = cfg.env.build()?;
    for &seed in &cfg.seeds {
        let ds = offline_dataset(&cfg, &env, seed)?;
        let path = out.join(format!("dataset_seed_{seed}.bin"));
        ds.save(&path)?;
        println!(
            "seed {seed}: {} transitions, {} episodes, {} ending in violation -> {}",
            ds.len(),
            ds.episodes().len(),
            ds.failed_episodes(),
            path.display()
        );
    }
    Ok(true)
}

fn pretrain(common: &Common) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let env = cfg.env.build()?;
    let oracle = oracle_values(&cfg, &env)?;
    let epsilon = resolve_epsilon(cfg.epsilon, oracle.as_ref())?;
    for &seed in &cfg.seeds {
        let ds = offline_dataset(&cfg, &env, seed)?;
        let p = pretrain_for(&cfg, cfg.method, &env, &ds, seed, oracle.as_ref(), epsilon)?;
        p.save(&out.join(format!("shield_seed_{seed}.ckpt")))?;
        p.write_log_csv(&out.join(format!("pretrain_log_seed_{seed}.csv")))?;
        if let Some(last) = p.log.last() {
            println!("seed {seed}: q_loss {:.5} v_loss {:.5} after {} steps", last.q_loss, last.v_loss, last.step);
        }
    }
    Ok(true)
}

fn train(common: &Common) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let report = run_experiment(&cfg, &out)?;
    if let Some(m) = &report.metrics {
        println!(
            "{}: ACR {:.4} AVR {:.4} TV {:.1} ARR {:.4} over {} seeds",
            report.arm,
            m.acr,
            m.avr,
            m.tv,
            m.arr,
            m.per_seed.len()
        );
    }
    for f in &report.failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    Ok(report.succeeded())
}

fn evaluate_cmd(common: &Common, policy: &str, shield: Option<&Path>, oracle_shield: bool) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let env = cfg.env.build()?;
    let policy = parse_policy(policy, &env)?;
    let oracle = oracle_values(&cfg, &env)?;
    let shield = if oracle_shield {
        let epsilon = resolve_epsilon(cfg.epsilon, oracle.as_ref())?;
        let (model, values) = oracle.context("the exact shield needs a tabular environment")?;
        Some(Shield::oracle(model, values, epsilon)?)
    } else if let Some(path) = shield {
        let epsilon = resolve_epsilon(cfg.epsilon, oracle.as_ref())?;
        Some(Shield::from_pretrained(&Pretrained::load(path)?, epsilon)?)
    } else {
        None
    };
    for &seed in &cfg.seeds {
        let mut e = env.clone();
        let outcome = evaluate(policy.as_ref(), shield.as_ref(), &mut e, cfg.eval.n_episodes, seed)?;
        let mut w = csv::Writer::from_path(out.join(format!("eval_trace_seed_{seed}.csv")))?;
        for r in &outcome.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let m = outcome.metrics;
        println!(
            "seed {seed}: ACR {:.4} AVR {:.4} test ARR {:.4} mean length {:.1}",
            m.acr, m.avr, m.test_arr, m.mean_episode_length
        );
    }
    Ok(true)
}

fn oracle(common: &Common) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let env = cfg.env.build()?;
    let model = cfg.env.tabular_model(&env).context("this environment has no tabular model")?;
    let values = value_iteration_optimal(&model.smdp, env.spec().gamma_safe, 1e-12)?;
    values.write_csv(&out.join("oracle_values.csv"))?;
    let labels = enumerate_dead_ends(&model.smdp);
    let count = |l: StateLabel| labels.iter().filter(|x| **x == l).count();
    let epsilon = values.epsilon_star();
    let report = certify_shield(&model.smdp, &values, epsilon);
    std::fs::write(out.join("certification.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "{} states: {} safe, {} dead-end, {} failure; h_dead {}; epsilon* {:.6}; value iteration {} sweeps",
        labels.len(),
        count(StateLabel::Safe),
        count(StateLabel::DeadEnd),
        count(StateLabel::Fail),
        values.h_dead,
        epsilon,
        values.iterations
    );
    println!(
        "certification: {} pairs checked, {} corrected, {} unsafe entries",
        report.checked_pairs,
        report.corrected_pairs,
        report.unsafe_entries()
    );
    Ok(report.passed())
}

fn ablate(common: &Common) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let report = ablation_grid(&cfg, &cfg.ablation.epsilons, &out)?;
    for arm in &report.arms {
        let eps = arm.epsilon.map_or("-".to_string(), |e| e.to_string());
        match &arm.metrics {
            Some(m) => println!(
                "{:<12} eps {:<5} ACR {:.4} AVR {:.4} TV {:.1} ARR {:.4}",
                arm.method.as_str(),
                eps,
                m.acr,
                m.avr,
                m.tv,
                m.arr
            ),
            None => println!("{:<12} eps {:<5} failed on every seed", arm.method.as_str(), eps),
        }
    }
    for f in &report.failures {
        eprintln!("{} seed {} failed: {}", f.arm, f.seed, f.error);
    }
    Ok(report.succeeded())
}

fn plug(common: &Common) -> Result<bool> {
    let (cfg, out) = load(common)?;
    let (rows, failures) = plug_experiment(&cfg, &out)?;
    for r in &rows {
        println!(
            "shield seed {} / policy seed {}: AVR {:.4} -> {:.4}, ACR {:.4} -> {:.4}",
            r.shield_seed, r.policy_seed, r.unshielded_avr, r.shielded_avr, r.unshielded_acr, r.shielded_acr
        );
    }
    for f in &failures {
        eprintln!("seed {} failed: {}", f.seed, f.error);
    }
    Ok(failures.is_empty())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Collect(c) => collect(c),
        Command::Pretrain(c) => pretrain(c),
        Command::Train(c) => train(c),
        Command::Evaluate { common, policy, shield, oracle_shield } => {
            evaluate_cmd(common, policy, shield.as_deref(), *oracle_shield)
        }
        Command::Oracle(c) => oracle(c),
        Command::Ablate(c) => ablate(c),
        Command::Plug(c) => plug(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
