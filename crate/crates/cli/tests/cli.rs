use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_timeframe")).args(args).output().unwrap()
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data").join(name)
}

fn scenario_two() -> String {
    data("scenario2_small.csv").to_str().unwrap().to_string()
}

const FAST: [&str; 6] = ["--seed", "5", "--b1", "60", "--b2", "5"];

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn fit_reports_both_candidates() {
    let v = json(&run(&["fit", &scenario_two()]));
    assert_eq!(v["candidates"].as_array().unwrap().len(), 2);
    assert_eq!(v["best"]["spec"]["family"], "4pll");
    let v = json(&run(&["fit", &scenario_two(), "--model", "beta"]));
    assert_eq!(v["best"]["spec"]["family"], "beta");
    assert_eq!(v["best"]["spec"]["scal"], 54.0);
}

#[test]
fn exit_codes_follow_error_class() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["fit"]).status.code(), Some(1));
    assert_eq!(run(&["detect", &scenario_two()]).status.code(), Some(1));
    assert_eq!(run(&["fit", &scenario_two(), "--model", "emax"]).status.code(), Some(1));
    assert_eq!(run(&["fit", "/nonexistent.csv"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time,value\n0,1\n3,x\n").unwrap();
    let out = run(&["fit", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
    let out = run(&["band", &scenario_two(), "--seed", "1", "--b1", "10", "--b2", "5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn detect_formats() {
    let input = scenario_two();
    let mut args = vec!["detect", input.as_str(), "--lambda", "0.005,0.013"];
    args.extend_from_slice(&FAST);
    let v = json(&run(&args));
    let thresholds = v["thresholds"].as_array().unwrap();
    assert_eq!(thresholds.len(), 2);
    let subsets: usize = thresholds
        .iter()
        .map(|t| t["report"]["subsets"].as_array().unwrap().len())
        .sum();

    let mut svg_args = args.clone();
    svg_args.extend_from_slice(&["--format", "svg"]);
    let svg = String::from_utf8(run(&svg_args).stdout).unwrap();
    assert_eq!(svg.matches("class=\"lambda-rule\"").count(), 2);
    assert_eq!(svg.matches("class=\"region-rule\"").count(), 2 * subsets);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("band.csv");
    let mut csv_args = args.clone();
    csv_args.extend_from_slice(&["--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(run(&csv_args).status.success());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + v["band"]["grid"].as_array().unwrap().len());
}

#[test]
fn relative_thresholds() {
    let input = scenario_two();
    let mut args = vec!["detect", input.as_str(), "--fraction", "1,0.6111111111111112"];
    args.extend_from_slice(&FAST);
    let v = json(&run(&args));
    let l0 = v["thresholds"][0]["threshold"]["value"].as_f64().unwrap();
    let l1 = v["thresholds"][1]["threshold"]["value"].as_f64().unwrap();
    assert!((l0 - 1.5f64.log2() / 45.0).abs() < 1e-15);
    assert!((l1 - 1.5f64.log2() / 27.5).abs() < 1e-12);
}

#[test]
fn simulate_null_scenario_never_rejects() {
    let v = json(&run(&[
        "simulate", "--scenario", "1", "--sigma-level", "small", "--runs", "50", "--seed", "8", "--b1", "60", "--b2", "5",
    ]));
    assert_eq!(v["runs"], 50);
    assert_eq!(v["rejections"], 0);
    assert_eq!(run(&["simulate", "--scenario", "9", "--seed", "1"]).status.code(), Some(1));
}

#[test]
fn batch_rows_match_ids() {
    let text = std::fs::read_to_string(data("scenario2_small.csv")).unwrap();
    let mut batch = String::from("id,time,value\n");
    for id in ["a", "b", "c"] {
        for line in text.lines().skip(1) {
            batch.push_str(&format!("{id},{line}\n"));
        }
    }
    batch.push_str("d,0,1\nd,3,1.5\nd,9,2\n");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("batch.csv");
    std::fs::write(&path, batch).unwrap();
    let mut args = vec!["batch", path.to_str().unwrap(), "--window", "5,40", "--model", "4pll"];
    args.extend_from_slice(&FAST);
    let v = json(&run(&args));
    let rows = v.as_array().unwrap();
    let ids: Vec<&str> = rows.iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["a", "b", "c", "d"]);
    assert!(rows.iter().all(|r| r["pass"].is_boolean()));
    assert!(rows[3]["error"].is_string() && rows[3]["pass"] == false);
    assert!(rows[..3].iter().all(|r| r["error"].is_null()));
    args.extend_from_slice(&["--format", "csv"]);
    let csv = String::from_utf8(run(&args).stdout).unwrap();
    assert_eq!(csv.lines().count(), 5);

    std::fs::write(&path, "id,time,value\nx,0,1\nx,3,2\n").unwrap();
    let mut args = vec!["batch", path.to_str().unwrap()];
    args.extend_from_slice(&FAST);
    assert_ne!(run(&args).status.code(), Some(0));
}

#[test]
fn compare_identical_groups() {
    let input = scenario_two();
    let args = [
        "compare", &input, &input, "--model", "4pll", "--b3", "30", "--seed", "5", "--b1", "100", "--b2", "10",
    ];
    let v = json(&run(&args));
    assert_eq!(v["difference"]["estimate"], 0.0);
    let lo = v["difference"]["lower"].as_f64().unwrap();
    let hi = v["difference"]["upper"].as_f64().unwrap();
    assert!(lo <= 0.0 && 0.0 <= hi);
}

#[test]
fn repeated_runs_are_identical() {
    let input = scenario_two();
    let mut args = vec!["ci", input.as_str(), "--model", "4pll", "--b3", "20"];
    args.extend_from_slice(&FAST);
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}
