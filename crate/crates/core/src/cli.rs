//! Command-line runner: `run` executes an experiment, `compare` contrasts two
//! metrics files.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ExperimentConfig, Strategy};
use crate::engine::{read_metrics_csv, run_training, write_metrics_csv, MetricsRow, RoundMetrics};
use crate::{Error, Result};

/// Exit code for invalid configuration or input files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures during a run.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "parallel-sfl", version, about = "Split federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write metrics.csv, summary.json and plans.jsonl.
    Run(RunArgs),
    /// Compare two metrics CSV files.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long, conflicts_with = "scenario")]
    pub config: Option<PathBuf>,
    /// Preset: iid, noniid-p1, noniid-p2, noniid-p4, noniid-p5, noniid-p10.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    /// Accuracy target for time-to-accuracy; defaults to B's final accuracy.
    #[arg(long)]
    pub target_acc: Option<f64>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Applies the flag overrides and validates.
pub fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Config("either --config or --scenario is required".into()))
        }
    };
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse::<Strategy>()?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(r) = args.rounds {
        cfg.rounds = r;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    seed: u64,
    strategy: Strategy,
    rounds: u64,
    final_accuracy: f64,
    total_sim_time: f64,
    total_traffic_bytes: u64,
    shard_label_histograms: &'a [Vec<usize>],
    config: &'a ExperimentConfig,
}

/// Runs the experiment and writes its outputs under `cfg.out_dir`.
pub fn execute_run(cfg: &ExperimentConfig) -> Result<Vec<RoundMetrics>> {
    let run = run_training(cfg)?;
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, &run.metrics)?;

    let mut plans = fs::File::create(dir.join("plans.jsonl"))?;
    for p in &run.plans {
        writeln!(plans, "{}", p.to_json()?)?;
    }
    let summary = Summary {
        seed: cfg.seed,
        strategy: cfg.strategy,
        rounds: cfg.rounds,
        final_accuracy: run.metrics.last().map_or(0.0, |m| m.test_accuracy),
        total_sim_time: run.metrics.iter().map(|m| m.sim_time).sum(),
        total_traffic_bytes: run.metrics.iter().map(|m| m.traffic_bytes).sum(),
        shard_label_histograms: &run.shard_histograms,
        config: cfg,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(run.metrics)
}

/// Aggregates of one metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub final_accuracy: f64,
    pub total_sim_time: f64,
    pub total_traffic_bytes: u64,
    pub mean_intra_waiting: f64,
    pub mean_inter_waiting: f64,
    /// Cumulative simulated time when accuracy first reaches the target.
    pub time_to_target: Option<f64>,
}

pub fn time_to_accuracy(rows: &[MetricsRow], target: f64) -> Option<f64> {
    let mut elapsed = 0.0;
    for r in rows {
        elapsed += r.sim_time;
        if r.test_accuracy >= target {
            return Some(elapsed);
        }
    }
    None
}

pub fn run_stats(rows: &[MetricsRow], target: f64) -> RunStats {
    let n = rows.len().max(1) as f64;
    RunStats {
        final_accuracy: rows.last().map_or(0.0, |r| r.test_accuracy),
        total_sim_time: rows.iter().map(|r| r.sim_time).sum(),
        total_traffic_bytes: rows.iter().map(|r| r.traffic_bytes).sum(),
        mean_intra_waiting: rows.iter().map(|r| r.intra_waiting).sum::<f64>() / n,
        mean_inter_waiting: rows.iter().map(|r| r.inter_waiting).sum::<f64>() / n,
        time_to_target: time_to_accuracy(rows, target),
    }
}

/// Builds the comparison table (columns: metric, A, B, B − A).
pub fn compare_files(a: &Path, b: &Path, target: Option<f64>) -> Result<String> {
    let rows_a = read_metrics_csv(a).map_err(as_config)?;
    let rows_b = read_metrics_csv(b).map_err(as_config)?;
    let target = match target {
        Some(t) => t,
        None => rows_b
            .last()
            .map(|r| r.test_accuracy)
            .ok_or_else(|| Error::Config(format!("{} has no rows", b.display())))?,
    };
    let sa = run_stats(&rows_a, target);
    let sb = run_stats(&rows_b, target);

    let mut out = String::new();
    let _ = writeln!(out, "{:<24}{:>16}{:>16}{:>16}", "metric", "A", "B", "B-A");
    let mut line = |name: &str, x: f64, y: f64| {
        let _ = writeln!(out, "{name:<24}{x:>16.6}{y:>16.6}{:>16.6}", y - x);
    };
    line("final_accuracy", sa.final_accuracy, sb.final_accuracy);
    line("total_sim_time", sa.total_sim_time, sb.total_sim_time);
    line("total_traffic_bytes", sa.total_traffic_bytes as f64, sb.total_traffic_bytes as f64);
    line("mean_intra_waiting", sa.mean_intra_waiting, sb.mean_intra_waiting);
    line("mean_inter_waiting", sa.mean_inter_waiting, sb.mean_inter_waiting);
    let fmt = |t: Option<f64>| t.map_or_else(|| "not reached".to_string(), |v| format!("{v:.6}"));
    let delta = match (sa.time_to_target, sb.time_to_target) {
        (Some(x), Some(y)) => format!("{:.6}", y - x),
        _ => "n/a".to_string(),
    };
    let _ = writeln!(
        out,
        "{:<24}{:>16}{:>16}{:>16}",
        format!("time_to_acc@{target:.4}"),
        fmt(sa.time_to_target),
        fmt(sb.time_to_target),
        delta
    );
    Ok(out)
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_RUNTIME
    }
}

/// Runs a parsed command; returns the process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => {
            let cfg = match resolve_config(&args) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_CONFIG;
                }
            };
            match execute_run(&cfg) {
                Ok(metrics) => {
                    let acc = metrics.last().map_or(0.0, |m| m.test_accuracy);
                    println!(
                        "{} rounds of {} done, final accuracy {acc:.4}, outputs in {}",
                        metrics.len(),
                        cfg.strategy,
                        cfg.out_dir.display()
                    );
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
        Command::Compare(args) => {
            let result = compare_files(&args.a, &args.b, args.target_acc).and_then(|table| {
                print!("{table}");
                if let Some(path) = &args.out {
                    fs::write(path, &table)?;
                }
                Ok(())
            });
            match result {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    exit_code(&e)
                }
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                0
            }
        }
    }
}
