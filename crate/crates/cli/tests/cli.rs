use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn dearrl(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dearrl"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DEARRL_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `(ACR, AVR, test ARR)` parsed from an `evaluate` line.
fn eval_numbers(line: &str) -> (f64, f64, f64) {
    let field = |key: &str| -> f64 {
        let rest = &line[line.find(key).unwrap_or_else(|| panic!("{key} in {line}")) + key.len()..];
        rest.split_whitespace().next().unwrap().parse().unwrap()
    };
    (field("ACR "), field("AVR "), field("test ARR "))
}

#[test]
fn oracle_certifies_carbrake() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("carbrake.toml");
    let o = dearrl(&["oracle", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("0 unsafe entries"));
    assert!(dir.path().join("oracle_values.csv").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("certification.json")).unwrap()).unwrap();
    assert_eq!(report["dead_end_entries"], 0);
    assert_eq!(report["fail_entries"], 0);
}

#[test]
fn evaluate_fixed_carbrake_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("carbrake.toml");
    let cfg = cfg.to_str().unwrap();
    let run = |extra: &[&str]| {
        let mut args = vec!["evaluate", "--config", cfg];
        args.extend_from_slice(extra);
        let o = dearrl(&args, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        eval_numbers(stdout(&o).lines().next().unwrap())
    };
    let (brake_acr, brake_avr, _) = run(&["--policy=-1"]);
    assert_eq!((brake_acr, brake_avr), (0.0, 0.0));
    let (_, throttle_avr, throttle_arr) = run(&["--policy", "1"]);
    assert_eq!((throttle_avr, throttle_arr), (1.0, 0.0));
    // the binned model is only approximate for the continuous car, so the exact shield
    // fires without guaranteeing safety here
    let (_, _, arr) = run(&["--policy", "1", "--oracle-shield"]);
    assert!(arr > 0.0);
    assert!(dir.path().join("eval_trace_seed_0.csv").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dearrl(&["train", "--config", "/nonexistent.toml"], dir.path());
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let cfg = configs().join("carbrake.toml");
    let wrong_dim = dearrl(&["evaluate", "--config", cfg.to_str().unwrap(), "--policy", "1,1"], dir.path());
    assert!(!wrong_dim.status.success());

    let point = configs().join("point_ablation.toml");
    let no_table = dearrl(&["oracle", "--config", point.to_str().unwrap()], dir.path());
    assert!(!no_table.status.success());
}

#[test]
fn seed_flag_and_small_grid_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("grid_train.toml"))
        .unwrap()
        .replace("n_random = 20000", "n_random = 2000")
        .replace("n_replay = 20000", "n_replay = 2000")
        .replace("steps = 30000", "steps = 2000")
        .replace("steps = 60000", "steps = 3000")
        .replace("n_episodes = 200", "n_episodes = 5");
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("run");
    let o = dearrl(&["train", "--config", cfg.to_str().unwrap(), "--seed", "4"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("over 1 seeds"));
    let arm = out.join("dea_rrl");
    for f in ["train_trace.csv", "eval_trace.csv", "metrics.csv", "shield.ckpt"] {
        assert!(arm.join("seed_4").join(f).exists(), "missing {f}");
    }
}
