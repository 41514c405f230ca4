use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use parallel_sfl::config::{ExperimentConfig, Strategy};
use parallel_sfl::engine::{read_metrics_csv, METRICS_COLUMNS};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parallel-sfl"))
        .args(args)
        .output()
        .unwrap()
}

fn small_config(dir: &Path, strategy: Strategy) -> std::path::PathBuf {
    let mut cfg = ExperimentConfig {
        rounds: 2,
        strategy,
        out_dir: dir.join("out"),
        ..ExperimentConfig::default()
    };
    cfg.fleet.num_workers = 6;
    cfg.data.samples_per_class = 30;
    cfg.data.test_samples_per_class = 5;
    cfg.model.batch_size = 8;
    let path = dir.join("cfg.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Strategy::ParallelSfl);
    let out = bin(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let o = dir.path().join("out");
    let rows = read_metrics_csv(&o.join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(fs::read_to_string(o.join("plans.jsonl")).unwrap().lines().count(), 2);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(o.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["strategy"], "parallel-sfl");
    assert_eq!(summary["rounds"], 2);
    let hist = summary["shard_label_histograms"].as_array().unwrap();
    assert_eq!(hist.len(), 6);
    let total: u64 = hist.iter().flat_map(|h| h.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 300);
    // The embedded configuration round-trips.
    let back = ExperimentConfig::from_json(&summary["config"].to_string()).unwrap();
    assert_eq!(back.fleet.num_workers, 6);
}

#[test]
fn scenario_run_has_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().join("p10");
    let out = bin(&[
        "run", "--scenario", "noniid-p10", "--rounds", "2", "--strategy", "random-cluster",
        "--out", o.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(o.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_COLUMNS.join(","));
    assert_eq!(lines.count(), 2);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(bin(&["run", "--scenario", "noniid-p3"]).status.code(), Some(2));
    assert_eq!(bin(&["run", "--scenario", "iid", "--strategy", "nope"]).status.code(), Some(2));
    assert_eq!(bin(&["run"]).status.code(), Some(2));
    assert_eq!(bin(&["bogus"]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"rounds": 3, "unknown_field": 1}"#).unwrap();
    assert_eq!(bin(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    fs::write(&bad, r#"{"model": {"learning_rate": -1.0}}"#).unwrap();
    assert_eq!(bin(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn compare_identical_files_shows_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), Strategy::FixedFrequency);
    assert_eq!(bin(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(0));
    let m = dir.path().join("out/metrics.csv");
    let table_path = dir.path().join("table.txt");
    let out = bin(&[
        "compare", m.to_str().unwrap(), m.to_str().unwrap(), "--out", table_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout, fs::read_to_string(&table_path).unwrap());
    for line in stdout.lines().skip(1) {
        let delta = line.split_whitespace().last().unwrap();
        assert!(delta.parse::<f64>().unwrap() == 0.0, "{line}");
    }

    let out = bin(&["compare", m.to_str().unwrap(), m.to_str().unwrap(), "--target-acc", "1.5"]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap();
    assert!(last.contains("not reached") && last.ends_with("n/a"), "{last}");
}

#[test]
fn compare_rejects_wrong_schema() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "a,b,c\n1,2,3\n").unwrap();
    let p = bad.to_str().unwrap();
    assert_eq!(bin(&["compare", p, p]).status.code(), Some(2));
    let missing = dir.path().join("missing.csv");
    assert_eq!(bin(&["compare", missing.to_str().unwrap(), p]).status.code(), Some(2));
}

#[test]
fn config_json_round_trips() {
    for name in ["iid", "noniid-p1", "noniid-p10"] {
        let mut cfg = ExperimentConfig::preset(name).unwrap();
        cfg.strategy = Strategy::SingleClusterSfl;
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
