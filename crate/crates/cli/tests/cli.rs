//! End-to-end tests of the command-line interface, run against the built
//! binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tiltrl::policy::{CategoricalPolicy, PolicyKind};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tiltrl")
}

fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(workspace_root())
        .env_remove("TILTRL_TRUST_DELTA")
        .output()
        .expect("binary runs")
}

const MINI_CONFIG: &str = r#"
[market]
n_customers = 2
horizon = 3
wholesale = [4.0, 5.0, 4.0]
elasticity = [-0.5, -0.4, -0.6]
crit_demand = [[2.0, 2.5, 2.0], [1.5, 2.0, 1.5]]
curt_demand = [[3.0, 4.0, 3.0], [2.0, 3.0, 2.0]]
alpha = [2.0, 2.5]
beta = [0.4, 0.5]
rho = 0.5
price_min = 0.0
price_max = 8.0
price_grid_step = 2.0
peak_hours = [2]

[train]
iterations = 4
episodes_per_iteration = 3
seed = 11
"#;

fn write_mini_config(dir: &Path) -> PathBuf {
    let path = dir.join("mini.toml");
    fs::write(&path, MINI_CONFIG).unwrap();
    path
}

fn strip_seconds(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut cols: Vec<&str> = line.split(',').collect();
            cols.pop();
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn train_writes_metrics_policy_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let metrics = fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0],
        "iteration,mean_reward,std_reward,beta_star,expected_kl,value_loss,seconds"
    );
    assert_eq!(lines.len(), 1 + 4, "one row per iteration");

    let manifest = fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"complete\""));
    assert!(manifest.contains("metrics.csv"));
    assert!(manifest.contains("policy.json"));

    let policy: PolicyKind =
        serde_json::from_str(&fs::read_to_string(out_dir.join("policy.json")).unwrap()).unwrap();
    policy.validate().unwrap();
}

#[test]
fn set_overrides_are_recorded_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "delta=0.01",
        "--seed",
        "77",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("delta = 0.01"), "{manifest}");
    assert!(manifest.contains("seed = 77"), "{manifest}");
}

#[test]
fn env_prefix_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = Command::new(bin())
        .args([
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .current_dir(workspace_root())
        .env("TILTRL_TRUST_DELTA", "0.02")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let manifest = fs::read_to_string(out_dir.join("manifest.toml")).unwrap();
    assert!(manifest.contains("delta = 0.02"), "{manifest}");
}

#[test]
fn missing_config_fails_naming_the_path() {
    let out = run(&[
        "train",
        "--config",
        "definitely_not_here.toml",
        "--out",
        "/tmp/x",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("definitely_not_here.toml"), "{stderr}");
}

#[test]
fn rerun_reproduces_metrics_and_policy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    // byte-identical apart from the wall-clock column
    let a = fs::read_to_string(dir_a.join("metrics.csv")).unwrap();
    let b = fs::read_to_string(dir_b.join("metrics.csv")).unwrap();
    assert_eq!(strip_seconds(&a), strip_seconds(&b));
    let pa = fs::read(dir_a.join("policy.json")).unwrap();
    let pb = fs::read(dir_b.join("policy.json")).unwrap();
    assert_eq!(pa, pb);
}

#[test]
fn eval_uniform_fixture_reports_midpoint_prices() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    // shipped-style uniform policy fixture over the config's 0..8 grid
    let uniform = CategoricalPolicy::new_factored(vec![0.0, 2.0, 4.0, 6.0, 8.0], 2).unwrap();
    let policy_path = tmp.path().join("uniform_policy.json");
    fs::write(
        &policy_path,
        serde_json::to_string(&PolicyKind::Categorical(uniform)).unwrap(),
    )
    .unwrap();

    let out_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--policy",
        policy_path.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--episodes",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
        "--dump-trajectory",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let pricing = fs::read_to_string(out_dir.join("pricing.csv")).unwrap();
    let mut rows = pricing.lines().skip(1);
    for _ in 0..6 {
        let row = rows.next().unwrap();
        let price: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((price - 4.0).abs() < 1e-9, "midpoint expected in {row}");
    }
    assert!(out_dir.join("response.csv").exists());
    assert!(out_dir.join("summary.txt").exists());
    let trajectory = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(
        trajectory.lines().count(),
        1 + 3,
        "header plus one row per hour"
    );
}

#[test]
fn eval_row_count_matches_horizon() {
    let tmp = tempfile::tempdir().unwrap();
    let root = workspace_root();
    let out_dir = tmp.path().join("train");
    let out = run(&[
        "train",
        "--config",
        root.join("configs/dr3_discrete.toml").to_str().unwrap(),
        "--set",
        "iterations=2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--policy",
        out_dir.join("policy.json").to_str().unwrap(),
        "--config",
        "dr3_discrete",
        "--episodes",
        "1",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let pricing = fs::read_to_string(eval_dir.join("pricing.csv")).unwrap();
    // 24 hours x 3 customers in long format
    assert_eq!(pricing.lines().count(), 1 + 24 * 3);
}

#[test]
fn trained_policy_shows_peak_response() {
    let tmp = tempfile::tempdir().unwrap();
    let root = workspace_root();
    let out_dir = tmp.path().join("train");
    let out = run(&[
        "train",
        "--config",
        root.join("configs/dr3_discrete.toml").to_str().unwrap(),
        "--set",
        "iterations=120",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eval_dir = tmp.path().join("eval");
    let out = run(&[
        "eval",
        "--policy",
        out_dir.join("policy.json").to_str().unwrap(),
        "--config",
        root.join("configs/dr3_discrete.toml").to_str().unwrap(),
        "--episodes",
        "2",
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = fs::read_to_string(eval_dir.join("summary.txt")).unwrap();
    let value = |key: &str| -> f64 {
        summary
            .lines()
            .find(|l| l.starts_with(key))
            .unwrap()
            .split('=')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(
        value("peak_load_reduction") > value("offpeak_load_reduction"),
        "{summary}"
    );
    assert!(
        value("peak_mean_price") > value("offpeak_mean_price"),
        "{summary}"
    );
}

#[test]
fn mismatched_policy_schema_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    // wrong customer count for the mini config
    let wrong = CategoricalPolicy::new_factored(vec![0.0, 2.0, 4.0, 6.0, 8.0], 3).unwrap();
    let policy_path = tmp.path().join("wrong.json");
    fs::write(
        &policy_path,
        serde_json::to_string(&PolicyKind::Categorical(wrong)).unwrap(),
    )
    .unwrap();
    let out = run(&[
        "eval",
        "--policy",
        policy_path.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("eval").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("mismatch") || stderr.contains("customers"),
        "{stderr}"
    );
}

#[test]
fn sweep_over_seeds_produces_run_dirs_and_index() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let out_dir = tmp.path().join("sweep");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        "seed=1,2,3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let index = fs::read_to_string(out_dir.join("index.csv")).unwrap();
    let lines: Vec<&str> = index.lines().collect();
    assert_eq!(lines[0], "run_dir,seed,status,final_mean_reward");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        assert!(line.contains(",ok,"), "{line}");
        let dir = line.split(',').next().unwrap();
        assert!(Path::new(dir).join("metrics.csv").exists());
        assert!(Path::new(dir).join("manifest.toml").exists());
    }
}

#[test]
fn sweep_indexes_partial_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let out_dir = tmp.path().join("sweep");
    // rho = 1.5 is invalid, rho = 0.4 is fine
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--grid",
        "rho=0.4,1.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let index = fs::read_to_string(out_dir.join("index.csv")).unwrap();
    assert!(index.contains(",ok,"));
    assert!(index.contains("failed"));
}

#[test]
fn empty_grid_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_mini_config(tmp.path());
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage"), "{stderr}");
}
