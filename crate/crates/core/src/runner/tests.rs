//! End-to-end runs of small experiments: metrics files, reproducibility, plug-and-play.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::online::Shield;
use crate::pretrain::{Pretrained, UniformPolicy};
use super::{plug_and_play_eval, run_experiment, ExperimentConfig};

fn small_grid_config(seeds: &[u64]) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/grid_train.toml");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.seeds = seeds.to_vec();
    cfg.data.n_random = 3000;
    cfg.data.n_replay = 3000;
    cfg.pretrain.steps = 3000;
    cfg.online.steps = 4000;
    cfg.eval.n_episodes = 20;
    cfg
}

/// Plain comma splitting; the files hold numbers and booleans only.
fn read_table(path: &Path) -> (HashMap<String, usize>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').enumerate().map(|(i, h)| (h.to_string(), i)).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn col<'a>(header: &HashMap<String, usize>, row: &'a [String], name: &str) -> &'a str {
    &row[header[name]]
}

#[test]
fn seed_metrics_match_recomputation_from_traces() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&small_grid_config(&[0, 1]), dir.path()).unwrap();
    assert!(report.succeeded());
    for seed in [0, 1] {
        let seed_dir = dir.path().join("dea_rrl").join(format!("seed_{seed}"));

        let (h, rows) = read_table(&seed_dir.join("train_trace.csv"));
        let tv = rows.iter().filter(|r| col(&h, r, "cost") == "1").count();
        let arr = rows.iter().filter(|r| col(&h, r, "corrected") == "true").count() as f64 / rows.len() as f64;
        assert_eq!(rows.len(), 4000);

        let (h, rows) = read_table(&seed_dir.join("eval_trace.csv"));
        let mut returns: HashMap<String, f64> = HashMap::new();
        let mut violated: HashMap<String, bool> = HashMap::new();
        for r in &rows {
            let ep = col(&h, r, "episode").to_string();
            *returns.entry(ep.clone()).or_default() += col(&h, r, "reward").parse::<f64>().unwrap();
            *violated.entry(ep).or_default() |= col(&h, r, "cost") == "1";
        }
        let n = returns.len() as f64;
        assert_eq!(n, 20.0);
        let acr = returns.values().sum::<f64>() / n;
        let avr = violated.values().filter(|v| **v).count() as f64 / n;

        let (h, m) = read_table(&seed_dir.join("metrics.csv"));
        let get = |name: &str| col(&h, &m[0], name).parse::<f64>().unwrap();
        assert_eq!(get("tv"), tv as f64);
        assert!((get("arr") - arr).abs() < 1e-12);
        assert!((get("acr") - acr).abs() < 1e-9);
        assert!((get("avr") - avr).abs() < 1e-12);

        let summary = &report.metrics.as_ref().unwrap().per_seed;
        assert_eq!(summary.iter().find(|s| s.seed == seed).unwrap().tv, tv as u64);
    }
}

#[test]
fn same_config_gives_byte_identical_outputs() {
    let cfg = small_grid_config(&[3]);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, a.path()).unwrap();
    run_experiment(&cfg, b.path()).unwrap();
    let seed_dir = Path::new("dea_rrl").join("seed_3");
    for f in ["train_trace.csv", "train_episodes.csv", "eval_trace.csv", "metrics.csv", "pretrain_log.csv"] {
        let x = std::fs::read(a.path().join(&seed_dir).join(f)).unwrap();
        let y = std::fs::read(b.path().join(&seed_dir).join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}

#[test]
fn vacuous_threshold_plug_changes_nothing() {
    let cfg = small_grid_config(&[0]);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, dir.path()).unwrap();
    let pretrained = Pretrained::load(&dir.path().join("dea_rrl/seed_0/shield.ckpt")).unwrap();
    let env = cfg.env.build().unwrap();
    let policy = UniformPolicy { action_space: crate::envs::Env::spec(&env).action_space.clone() };

    // Q_c is a probability-like value in [0, 1], so a threshold above 1 admits everything
    let vacuous = Shield::from_pretrained(&pretrained, 1.5).unwrap();
    let cmp = plug_and_play_eval(&vacuous, &policy, &env, 30, 11).unwrap();
    assert_eq!(cmp.shielded, cmp.unshielded);
    assert_eq!(cmp.shielded.test_arr, 0.0);

    let active = vacuous.with_epsilon(0.5).unwrap();
    let cmp = plug_and_play_eval(&active, &policy, &env, 30, 11).unwrap();
    assert!(cmp.shielded.test_arr > 0.0);
    assert!(cmp.shielded.avr <= cmp.unshielded.avr);
}
