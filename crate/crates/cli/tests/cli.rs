use std::path::Path;
use std::process::{Command, Output};

const FIG1: &str = r#"{
  "queues": ["q1", "q2"],
  "routes": {"r0": ["q1", "q2"], "r1": ["q1"], "r2": ["q2"]},
  "nu": {"r0": 0.2, "r1": 0.3, "r2": 0.1},
  "mean_size": {"r0": 1.0, "r1": 1.0, "r2": 1.0},
  "phi": {"q1": {"values": [1.0]}, "q2": {"values": [1.0]}}
}"#;

fn spinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinlab"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn validate_reports_stability() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "net.json", FIG1);
    let out = spinlab(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout)
        .trim_end()
        .ends_with("Stable"));

    let hot = write(
        dir.path(),
        "hot.json",
        &FIG1.replace("\"r1\": 0.3", "\"r1\": 0.9"),
    );
    let out = spinlab(&["validate", "--config", &hot]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout)
        .trim_end()
        .ends_with("Unstable"));
}

#[test]
fn config_and_usage_errors_exit_one_with_schema() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["validate"],
        vec!["exact", "--config", "/nonexistent/net.json"],
        vec!["frobnicate"],
    ] {
        let out = spinlab(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("Config file schema"),
            "{args:?}"
        );
    }
    let bad = write(
        dir.path(),
        "bad.json",
        &FIG1.replace("\"q2\"]}", "\"q9\"]}"),
    );
    assert_eq!(
        spinlab(&["validate", "--config", &bad]).status.code(),
        Some(1)
    );
    assert_eq!(spinlab(&["--help"]).status.code(), Some(0));
    assert_eq!(spinlab(&["--version"]).status.code(), Some(0));
}

#[test]
fn throughput_without_population_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "net.json", FIG1);
    let out_dir = dir.path().join("out");
    let out = spinlab(&[
        "throughput",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_dir.join("manifest.json").exists());
}

#[test]
fn exact_table_accounts_for_all_mass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "net.json", FIG1);
    let out_dir = dir.path().join("out");
    let out = spinlab(&[
        "exact",
        "--config",
        &cfg,
        "--box",
        "8",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let mut rd = csv::Reader::from_path(out_dir.join("exact.csv")).unwrap();
    let head: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        head,
        [
            "n_r0",
            "n_r1",
            "n_r2",
            "log_Bn",
            "pmf",
            "lambda_r0",
            "lambda_r1",
            "lambda_r2"
        ]
    );
    let mut mass = 0.0;
    let mut rows = 0;
    for rec in rd.records() {
        let rec = rec.unwrap();
        mass += rec[4].parse::<f64>().unwrap();
        rows += 1;
    }
    assert_eq!(rows, 9 * 9 * 9);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("exact.json")).unwrap()).unwrap();
    let tail = summary["report"]["tail_mass"].as_f64().unwrap();
    assert!((mass + tail - 1.0).abs() < 1e-12);

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "exact");
    assert_eq!(manifest["config_hash"], summary["config_hash"]);
    assert_eq!(
        manifest["outputs"],
        serde_json::json!(["exact.csv", "exact.json"])
    );
}

#[test]
fn different_seeds_give_different_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "net.json", FIG1);
    let run = |seed: &str, name: &str| {
        let o = dir.path().join(name);
        let out = spinlab(&[
            "sim-flow",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--horizon",
            "50",
            "--out",
            o.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        std::fs::read(o.join("events.csv")).unwrap()
    };
    assert_eq!(run("3", "a"), run("3", "b"));
    assert_ne!(run("3", "a"), run("4", "c"));
}
