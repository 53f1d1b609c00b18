// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

use std::path::Path;
use std::process::Command;

fn bocpd(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bocpd")).args(args).output().expect("binary runs")
}

fn strip_timing(manifest: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(manifest).unwrap();
    v.as_object_mut().unwrap().remove("wall_time_seconds");
    v
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn segment_bundles_are_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = bocpd(&["simulate", "--scenario", "s4", "--seed", "3", "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let config = tmp.path().join("config.json");
    let cfg = serde_json::json!({
        "extension": "pf",
        "n_particles": 40,
        "models": [
            { "kind": "periodic" },
            { "kind": "linear_trend" }
        ],
        "backward_draws": 50,
        "seed": 7
    });
    std::fs::write(&config, cfg.to_string()).unwrap();
    let series = data.join("series.csv");
    let mut dirs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let out = bocpd(&[
            "segment",
            "--config",
            config.to_str().unwrap(),
            "--input",
            series.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dirs.push(dir);
    }
    for f in ["segments.json", "filtering.csv", "inclusion.csv", "fit.csv"] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f} differs");
    }
    assert_eq!(strip_timing(&read(&dirs[0], "manifest.json")), strip_timing(&read(&dirs[1], "manifest.json")));

    let truth = data.join("truth.json");
    let seg = dirs[0].join("segments.json");
    let out = bocpd(&["evaluate", "--segments", seg.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert!(out.status.success());
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(m["model_accuracy"].as_f64().unwrap() > 0.5);

    let out = bocpd(&["report", "--segments", seg.to_str().unwrap()]);
    assert!(out.status.success());
    let s: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(s["segments"], 0);
}

#[test]
fn failures_emit_machine_readable_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, r#"{"models": [], "input": "missing.csv"}"#).unwrap();
    let out = bocpd(&["segment", "--config", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "timestamp,value\n2020-01-01T00:00:00Z,0.1\n2019-12-31T00:00:00Z,0.2\n").unwrap();
    std::fs::write(&config, r#"{"models": [{"kind": "mean"}]}"#).unwrap();
    let out = bocpd(&["segment", "--config", config.to_str().unwrap(), "--input", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "ingest");
    assert!(err["error"]["message"].as_str().unwrap().contains("line 3"));
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bocpd"))
        .args(["simulate", "--scenario", "s2"])
        .env("BOCPD_OUTPUT_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(tmp.path().join("series.csv").exists());
    assert!(tmp.path().join("truth.json").exists());
}
