//! Command-line entry point: load a run configuration, train or evaluate
//! pricing policies, sweep parameter grids, and emit CSV metrics, policy
//! dumps, and plot-ready tables.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tiltrl::config::RunConfig;
use tiltrl::policy::PolicyKind;
use tiltrl::qlearn::train_qlearning;
use tiltrl::trainer::{
    evaluate, greedy_episode, metrics_to_csv, train, train_random, BaselineKind, MetricsRecord,
};
use tiltrl::Error;

/// Environment variables with this prefix override config keys, e.g.
/// `TILTRL_TRUST_DELTA=0.01` or `TILTRL_ITERATIONS=50`. `--set` flags win
/// over environment variables.
const ENV_PREFIX: &str = "TILTRL_";

#[derive(Parser)]
#[command(
    name = "tiltrl",
    version,
    about = "Nonparametric trust-region policy optimization for demand-response pricing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a pricing policy; writes metrics.csv, policy.json, and a run
    /// manifest (plus baseline metrics when configured).
    Train(TrainArgs),
    /// Evaluate a dumped policy; writes pricing.csv, response.csv, and a
    /// summary.
    Eval(EvalArgs),
    /// Run a grid of configurations, one run directory per grid point, with
    /// an index CSV.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Config file path, or a name resolved against `./configs/<name>.toml`
    #[arg(long)]
    config: PathBuf,
    /// Config override KEY=VALUE (repeatable); KEY is section.field or a
    /// unique bare field name
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Policy dump (policy.json) from a training run
    #[arg(long)]
    policy: PathBuf,
    /// Config file path, or a name resolved against `./configs/<name>.toml`
    #[arg(long)]
    config: PathBuf,
    /// Number of evaluation episodes
    #[arg(long, default_value_t = 8)]
    episodes: usize,
    /// Evaluation seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also dump one greedy episode as trajectory.csv
    #[arg(long)]
    dump_trajectory: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Config file path, or a name resolved against `./configs/<name>.toml`
    #[arg(long)]
    config: PathBuf,
    /// Grid axis KEY=V1,V2,... (repeatable); the sweep runs the cartesian
    /// product of all axes
    #[arg(long = "grid", value_name = "KEY=V1,V2,...")]
    grid: Vec<String>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_path: String,
    seed: u64,
    out_dir: String,
    status: String,
    artifacts: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    policy_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    episodes: Option<usize>,
    resolved: RunConfig,
}

impl RunManifest {
    fn write(&self, out_dir: &Path) -> Result<(), Error> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::ConfigParse(e.to_string()))?;
        fs::write(out_dir.join("manifest.toml"), text)?;
        Ok(())
    }
}

fn resolve_config_path(path: &Path) -> Result<PathBuf, Error> {
    if path.exists() {
        return Ok(path.to_path_buf());
    }
    if path.extension().is_none() {
        let with_ext = path.with_extension("toml");
        if with_ext.exists() {
            return Ok(with_ext);
        }
        let in_configs = Path::new("configs").join(&with_ext);
        if in_configs.exists() {
            return Ok(in_configs);
        }
    }
    Err(Error::ConfigParse(format!(
        "config file not found: {}",
        path.display()
    )))
}

/// Override pairs from the environment, lowest precedence first; sorted for
/// determinism.
fn env_overrides() -> Vec<(String, String)> {
    let mut vars: Vec<(String, String)> = std::env::vars()
        .filter_map(|(name, value)| {
            let key = name.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
            if key.is_empty() {
                return None;
            }
            // TILTRL_TRUST_DELTA -> trust.delta; otherwise a bare field name
            const SECTION_NAMES: &[&str] = &["market", "keys", "advantage", "trust", "train"];
            let key = match key.split_once('_') {
                Some((section, field)) if SECTION_NAMES.contains(&section) => {
                    format!("{section}.{field}")
                }
                _ => key,
            };
            Some((key, value))
        })
        .collect();
    vars.sort();
    vars
}

fn parse_set_flags(flags: &[String]) -> Result<Vec<(String, String)>, Error> {
    flags
        .iter()
        .map(|flag| {
            flag.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("--set expects KEY=VALUE, got '{flag}'"))
                })
        })
        .collect()
}

fn load_config(
    config: &Path,
    set: &[String],
    seed: Option<u64>,
) -> Result<(PathBuf, RunConfig), Error> {
    let path = resolve_config_path(config)?;
    let mut overrides = env_overrides();
    overrides.extend(parse_set_flags(set)?);
    if let Some(seed) = seed {
        overrides.push(("train.seed".to_string(), seed.to_string()));
    }
    let cfg = RunConfig::load_with_overrides(&path, &overrides)?;
    Ok((path, cfg))
}

struct TrainOutcome {
    final_mean_reward: f64,
}

/// The full training pipeline for one resolved config: manifest, training,
/// metrics/policy artifacts, optional baselines.
fn run_train(cfg: &RunConfig, config_path: &Path, out_dir: &Path) -> Result<TrainOutcome, Error> {
    fs::create_dir_all(out_dir)?;
    let mut artifacts = vec!["metrics.csv".to_string(), "policy.json".to_string()];
    let mut manifest = RunManifest {
        command: "train".to_string(),
        config_path: config_path.display().to_string(),
        seed: cfg.train.seed,
        out_dir: out_dir.display().to_string(),
        status: "running".to_string(),
        artifacts: artifacts.clone(),
        policy_path: None,
        episodes: None,
        resolved: cfg.clone(),
    };
    manifest.write(out_dir)?;

    let train_cfg = cfg.train_config()?;
    let result = (|| -> Result<TrainOutcome, Error> {
        let (policy, metrics) = train(&cfg.market, &train_cfg)?;
        fs::write(out_dir.join("metrics.csv"), metrics_to_csv(&metrics))?;
        let dump = serde_json::to_string_pretty(&policy)
            .map_err(|e| Error::InvalidArgument(format!("policy serialization: {e}")))?;
        fs::write(out_dir.join("policy.json"), dump)?;

        match cfg.baseline()? {
            BaselineKind::None => {}
            BaselineKind::Random => {
                let baseline = train_random(&cfg.market, &train_cfg)?;
                fs::write(
                    out_dir.join("baseline_random.csv"),
                    metrics_to_csv(&baseline),
                )?;
                artifacts.push("baseline_random.csv".to_string());
            }
            BaselineKind::QLearning => {
                let (qpolicy, qmetrics) = train_qlearning(&cfg.market, &train_cfg)?;
                fs::write(
                    out_dir.join("baseline_qlearning.csv"),
                    metrics_to_csv(&qmetrics),
                )?;
                let dump = serde_json::to_string_pretty(&PolicyKind::Categorical(qpolicy))
                    .map_err(|e| Error::InvalidArgument(format!("policy serialization: {e}")))?;
                fs::write(out_dir.join("baseline_qlearning_policy.json"), dump)?;
                artifacts.push("baseline_qlearning.csv".to_string());
                artifacts.push("baseline_qlearning_policy.json".to_string());
            }
        }

        let tail = metrics.len().saturating_sub(10);
        let last: &[MetricsRecord] = &metrics[tail..];
        let final_mean_reward = last.iter().map(|m| m.mean_reward).sum::<f64>() / last.len() as f64;
        Ok(TrainOutcome { final_mean_reward })
    })();

    match &result {
        Ok(_) => {
            manifest.status = "complete".to_string();
            manifest.artifacts = artifacts;
        }
        Err(e) => manifest.status = format!("failed: {e}"),
    }
    manifest.write(out_dir)?;
    result
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let (path, cfg) = load_config(&args.config, &args.set, args.seed)?;
    let outcome = run_train(&cfg, &path, &args.out)?;
    println!(
        "train: {} iterations complete; mean reward over final iterations: {:.3}",
        cfg.train.iterations, outcome.final_mean_reward
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let (path, cfg) = load_config(&args.config, &args.set, None)?;
    if args.episodes == 0 {
        return Err(Error::InvalidArgument("--episodes must be >= 1".into()));
    }
    let text = fs::read_to_string(&args.policy).map_err(|e| {
        Error::ConfigParse(format!("cannot read policy {}: {e}", args.policy.display()))
    })?;
    let policy: PolicyKind = serde_json::from_str(&text)
        .map_err(|e| Error::ConfigParse(format!("malformed policy dump: {e}")))?;

    fs::create_dir_all(&args.out)?;
    let mut artifacts = vec![
        "pricing.csv".to_string(),
        "response.csv".to_string(),
        "summary.txt".to_string(),
    ];
    let mut manifest = RunManifest {
        command: "eval".to_string(),
        config_path: path.display().to_string(),
        seed: args.seed,
        out_dir: args.out.display().to_string(),
        status: "running".to_string(),
        artifacts: artifacts.clone(),
        policy_path: Some(args.policy.display().to_string()),
        episodes: Some(args.episodes),
        resolved: cfg.clone(),
    };
    manifest.write(&args.out)?;

    let result = (|| -> Result<(), Error> {
        let scheme = cfg.key_scheme()?;
        let summary = evaluate(&policy, &cfg.market, args.episodes, args.seed, scheme)?;
        fs::write(args.out.join("pricing.csv"), summary.pricing_csv())?;
        fs::write(args.out.join("response.csv"), summary.response_csv())?;

        let peak = cfg.market.peak_hours_resolved();
        let off: Vec<usize> = (1..=cfg.market.horizon)
            .filter(|h| !peak.contains(h))
            .collect();
        let lines = format!(
            "mean_reward={}\npeak_mean_price={}\noffpeak_mean_price={}\npeak_load_reduction={}\noffpeak_load_reduction={}\n",
            summary.mean_reward,
            summary.mean_over_hours(&peak, |h| &h.mean_price),
            summary.mean_over_hours(&off, |h| &h.mean_price),
            summary.mean_over_hours(&peak, |h| &h.load_reduction),
            summary.mean_over_hours(&off, |h| &h.load_reduction),
        );
        fs::write(args.out.join("summary.txt"), &lines)?;
        print!("{lines}");

        if args.dump_trajectory {
            let traj = greedy_episode(&cfg.market, &policy, scheme, args.seed)?;
            let mut buf = Vec::new();
            traj.write_records(&mut buf)?;
            fs::write(args.out.join("trajectory.csv"), buf)?;
            artifacts.push("trajectory.csv".to_string());
        }
        Ok(())
    })();

    match &result {
        Ok(()) => {
            manifest.status = "complete".to_string();
            manifest.artifacts = artifacts;
        }
        Err(e) => manifest.status = format!("failed: {e}"),
    }
    manifest.write(&args.out)?;
    result
}

struct GridAxis {
    key: String,
    values: Vec<String>,
}

fn parse_grid(flags: &[String]) -> Result<Vec<GridAxis>, Error> {
    flags
        .iter()
        .map(|flag| {
            let (key, values) = flag.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("--grid expects KEY=V1,V2,..., got '{flag}'"))
            })?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            if values.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "--grid axis '{key}' has no values"
                )));
            }
            Ok(GridAxis {
                key: key.trim().to_string(),
                values,
            })
        })
        .collect()
}

fn sanitize_component(v: &str) -> String {
    v.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect()
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Error> {
    let axes = parse_grid(&args.grid)?;
    if axes.is_empty() {
        eprintln!("usage: tiltrl sweep --config PATH --grid KEY=V1,V2,... [--grid ...]");
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let path = resolve_config_path(&args.config)?;
    fs::create_dir_all(&args.out)?;

    // cartesian product, first axis slowest
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(points.len() * axis.values.len());
        for point in &points {
            for value in &axis.values {
                let mut p = point.clone();
                p.push((axis.key.clone(), value.clone()));
                next.push(p);
            }
        }
        points = next;
    }

    let mut index = String::from("run_dir,");
    index.push_str(
        &axes
            .iter()
            .map(|a| a.key.as_str())
            .collect::<Vec<_>>()
            .join(","),
    );
    index.push_str(",status,final_mean_reward\n");

    let mut any_failed = false;
    for (i, point) in points.iter().enumerate() {
        let suffix: String = point
            .iter()
            .map(|(k, v)| format!("{}-{}", sanitize_component(k), sanitize_component(v)))
            .collect::<Vec<_>>()
            .join("_");
        let run_dir = args.out.join(format!("run_{i:03}_{suffix}"));

        let mut overrides = env_overrides();
        overrides.extend(parse_set_flags(&args.set)?);
        overrides.extend(point.iter().cloned());

        let run_result = RunConfig::load_with_overrides(&path, &overrides)
            .and_then(|cfg| run_train(&cfg, &path, &run_dir));
        let (status, reward) = match run_result {
            Ok(outcome) => ("ok".to_string(), outcome.final_mean_reward.to_string()),
            Err(e) => {
                any_failed = true;
                (format!("failed: {e}").replace(',', ";"), String::new())
            }
        };
        index.push_str(&format!(
            "{},{},{},{}\n",
            run_dir.display(),
            point
                .iter()
                .map(|(_, v)| v.as_str())
                .collect::<Vec<_>>()
                .join(","),
            status,
            reward
        ));
        println!("sweep point {i}: {status}");
    }
    fs::write(args.out.join("index.csv"), index)?;
    if any_failed {
        return Err(Error::InvalidArgument(
            "one or more sweep runs failed; see index.csv".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(
                &e,
                Error::InvalidArgument(msg) if msg.contains("--") || msg.contains("grid")
            );
            if usage {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
