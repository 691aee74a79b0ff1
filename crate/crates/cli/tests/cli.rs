use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikeshift"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

const QUICK: [&str; 6] = [
    "--lemma-samples",
    "2000",
    "--equivalence-instances",
    "20",
    "--gradient-batches",
    "20",
];

#[test]
fn verify_passes_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let mut args = vec!["verify", "--out", out, "--seed", "3"];
    args.extend(QUICK);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["command"], "verify");
    assert_eq!(r["suite"]["passed"], true);
    assert_eq!(r["suite"]["results"].as_array().unwrap().len(), 5);
    assert_eq!(r["config"]["seed"], 3);
    assert_eq!(r["config"]["lemma_samples"], 2000);
}

#[test]
fn ceil_exponents_break_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "verify",
        "--suites",
        "lemma1",
        "--k-mode",
        "ceil",
        "--lemma-samples",
        "2000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    let r = report(dir.path());
    let result = &r["suite"]["results"][0];
    assert_eq!(result["passed"], false);
    assert!(!result["counterexamples"].as_array().unwrap().is_empty());
    assert_eq!(r["config"]["k_mode"], "ceil");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    fs::write(&bad, "seed = 1\nthis line has no separator\n").unwrap();
    let bad_path = bad.to_str().unwrap();
    for args in [
        vec!["verify", "--config", bad_path],
        vec!["verify", "--heads", "3"],
        vec!["verify", "--timesteps", "4"],
        vec!["verify", "--k-mode", "floor"],
        vec!["verify", "--config", "/nonexistent/run.conf"],
        vec!["demo", "--pow2-norm=sometimes"],
        vec!["frobnicate"],
    ] {
        let o = run(&args);
        assert_eq!(
            code(&o),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        "# quick run\nseed = 9\nsuites = op_counts, gradients\ngradient-batches = 5\nk_mode = ceil\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "verify",
        "--config",
        conf.to_str().unwrap(),
        "--k-mode",
        "round",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&out);
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["config"]["k_mode"], "round");
    assert_eq!(r["config"]["gradient_batches"], 5);
    assert_eq!(r["suite"]["results"].as_array().unwrap().len(), 2);
}

#[test]
fn bench_ops_reproduces_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["bench-ops", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let r = report(dir.path());
    assert_eq!(r["all_measured_match"], true);
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 16);
    let pt64 = rows
        .iter()
        .find(|row| row["kernel"] == "ptsoftmax" && row["n"] == 64)
        .unwrap();
    let counts = &pt64["measured"]["counts"];
    assert_eq!(
        (
            &counts["add"],
            &counts["sub"],
            &counts["shift"],
            &counts["lut"]
        ),
        (
            &Value::from(63),
            &Value::from(64),
            &Value::from(64),
            &Value::from(1)
        )
    );
    let ln = rows
        .iter()
        .find(|row| row["kernel"] == "layernorm")
        .unwrap();
    assert!(ln["measured"].is_null());
}

#[test]
fn demo_is_deterministic_and_multiplier_free() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "demo", "--seed", "5", "--inputs", "4", "--blocks", "1", "--out", out,
    ];
    assert_eq!(code(&run(&args)), 0);
    let first = (
        fs::read(dir.path().join("report.json")).unwrap(),
        fs::read(dir.path().join("spikes.csv")).unwrap(),
        fs::read(dir.path().join("checkpoint/manifest.json")).unwrap(),
    );
    assert_eq!(code(&run(&args)), 0);
    assert_eq!(first.0, fs::read(dir.path().join("report.json")).unwrap());
    assert_eq!(first.1, fs::read(dir.path().join("spikes.csv")).unwrap());
    assert_eq!(
        first.2,
        fs::read(dir.path().join("checkpoint/manifest.json")).unwrap()
    );

    let r = report(dir.path());
    assert_eq!(r["multiplier_free"], true);
    for op in ["mul", "div", "exp", "sqrt"] {
        assert_eq!(r["spiking_ops"][op], 0);
    }
    assert_eq!(r["stages"][3]["exact"], true);
    assert_eq!(r["break_even"]["threshold"], 0.31875);
    let csv = String::from_utf8(first.1).unwrap();
    assert_eq!(csv.lines().next(), Some("block,rate"));
    assert_eq!(csv.lines().count(), 2);

    let o = run(&["spike-report", "--seed", "5", "--inputs", "4", "--out", out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read_to_string(dir.path().join("spikes.csv")).unwrap(),
        csv
    );
    assert_eq!(report(dir.path())["command"], "spike-report");
}

#[test]
fn spike_report_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["spike-report", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}
