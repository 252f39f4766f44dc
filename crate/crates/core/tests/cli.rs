use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mflq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflq")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write_example(dir: &Path, name: &str) -> String {
    let out = mflq(&["example", name]);
    assert!(out.status.success());
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, &out.stdout).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn example31_is_not_regular() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_example(dir.path(), "example31");
    let out = mflq(&["regularity", &file]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["regular"], false);
    assert!(v["failed_conditions"].as_array().unwrap().contains(&"range(Σ)".into()));
}

#[test]
fn scalar_classic_value() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_example(dir.path(), "scalar_classic");
    let v = json(&mflq(&["value", &file, "--law", "mean=1"]));
    assert!((v["value"].as_f64().unwrap() - 0.5).abs() < 1e-8);
    assert_eq!(v["certified"], true);
}

#[test]
fn example31_zero_strategy_costs_two() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_example(dir.path(), "example31");
    let out = mflq(&["simulate", &file, "--strategy", "zero", "--law", "mean=1", "--paths", "200"]);
    let v = json(&out);
    assert_eq!(v["cost_mean"].as_f64(), Some(2.0));
    assert_eq!(v["cost_stderr"].as_f64(), Some(0.0));
}

#[test]
fn example31_value_is_flagged_uncertified() {
    let v = json(&mflq(&["value", "preset:example31", "--law", "mean=-3"]));
    assert_eq!(v["value"].as_f64(), Some(18.0));
    assert_eq!(v["certified"], false);
}

#[test]
fn malformed_documents_exit_2_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"dims": {"n": 1, "m": 1}, "horizon": {"t": 0, "T": 1, "steps": 10},
            "weights": {"R": {"rows": 1, "cols": 1, "data": [1, 2]}}}"#,
    )
    .unwrap();
    let out = mflq(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights.R.data"));

    std::fs::write(&path, "{").unwrap();
    assert_eq!(mflq(&["solve", path.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(mflq(&["solve", "/no/such/file.json"]).status.code(), Some(2));
}

#[test]
fn validation_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("asym.json");
    std::fs::write(
        &path,
        r#"{"dims": {"n": 2, "m": 1}, "horizon": {"t": 0, "T": 1, "steps": 10},
            "weights": {"Q": {"rows": 2, "cols": 2, "data": [1, 1, 0, 1]}}}"#,
    )
    .unwrap();
    let out = mflq(&["solve", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("weights.Q"));
}

#[test]
fn finite_escape_exits_3_naming_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("escape.json");
    // With R = -1 the equation is dP/ds = -P^2, so P(s) = 1 / (s - 0.9) from
    // P(1) = 10 blows up at s = 0.9.
    std::fs::write(
        &path,
        r#"{"dims": {"n": 1, "m": 1}, "horizon": {"t": 0, "T": 1, "steps": 100},
            "coefficients": {"B": {"rows": 1, "cols": 1, "data": [1]}},
            "weights": {"R": {"rows": 1, "cols": 1, "data": [-1]},
                        "G": {"rows": 1, "cols": 1, "data": [10]}}}"#,
    )
    .unwrap();
    let out = mflq(&["regularity", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("node"));
}

#[test]
fn failed_verification_exits_4() {
    // Five paths cannot pin the completion identity to 1% on a noisy problem.
    let out = mflq(&[
        "verify", "preset:random_spd:1", "--suite", "completion", "--paths", "5", "--steps", "20",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json(&out)["passed"], false);
}

#[test]
fn verify_passes_on_scalar_classic() {
    let out = mflq(&["verify", "preset:scalar_classic", "--paths", "50", "--controls", "10", "--steps", "500"]);
    let v = json(&out);
    assert_eq!(out.status.code(), Some(0), "{v}");
    let names: Vec<&str> = v["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"qp.matches_value"));
    assert!(names.contains(&"degeneration.pi_equals_p"));
}

#[test]
fn unknown_suite_and_bad_usage_exit_2() {
    assert_eq!(mflq(&["verify", "preset:scalar_classic", "--suite", "nope"]).status.code(), Some(2));
    assert_eq!(mflq(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(mflq(&["example", "nope"]).status.code(), Some(2));
    assert_eq!(mflq(&["--help"]).status.code(), Some(0));
}

#[test]
fn csv_export_has_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("out");
    let out = mflq(&["solve", "preset:random_spd:2", "--gre-steps", "40", "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(csv.join("solution.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 42);
    let header: Vec<&str> = lines[0].split(',').collect();
    // time + P, Pi (2x2 each) + Theta, Gamma (2x2 each) + E[X] (2).
    assert_eq!(header.len(), 1 + 4 * 4 + 2);
    assert_eq!(header[0], "time");
    assert_eq!(*header.last().unwrap(), "EX_1");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == header.len()));
}

#[test]
fn strategy_files_reproduce_the_optimal_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let strat = dir.path().join("strategy.json");
    let s = strat.to_str().unwrap();
    assert!(mflq(&["solve", "preset:random_spd:4", "--strategy-out", s]).status.success());
    let args = ["simulate", "preset:random_spd:4", "--paths", "300", "--steps", "40", "--seed", "2"];
    let a = mflq(&[&args[..], &["--strategy", "optimal"]].concat());
    let b = mflq(&[&args[..], &["--strategy", s]].concat());
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn solve_reports_requested_times() {
    let v = json(&mflq(&["solve", "preset:scalar_classic", "--times", "0,0.5,1"]));
    let samples = v["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 3);
    let p_half = samples[1]["P"][0][0].as_f64().unwrap();
    assert!((p_half - 1.0 / 1.5).abs() < 1e-8);
    assert_eq!(v["solvable"], true);
    assert_eq!(mflq(&["solve", "preset:scalar_classic", "--times", "2"]).status.code(), Some(2));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    for args in [
        &["simulate", "preset:random_spd:5", "--paths", "1000", "--steps", "50", "--seed", "3"][..],
        &["verify", "preset:random_spd:5", "--paths", "300", "--steps", "30", "--controls", "3", "--seed", "3"][..],
        &["example", "random_spd", "--seed", "8", "--n", "3", "--m", "1"][..],
    ] {
        let a = mflq(args);
        let b = mflq(args);
        assert_eq!(a.status.code(), b.status.code());
        assert_eq!(a.stdout, b.stdout);
    }
}

#[test]
fn example_documents_reload() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["example31", "scalar_classic", "random_spd"] {
        let file = write_example(dir.path(), name);
        let text = std::fs::read_to_string(&file).unwrap();
        let doc = mflq::document::problem_from_text(&text).unwrap();
        let again = mflq::document::to_text(&mflq::document::problem_to_value(&doc.problem, doc.law.as_ref()));
        assert_eq!(again, text);
    }
}
