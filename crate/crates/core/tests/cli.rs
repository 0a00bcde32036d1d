//! Front-door behavior: report shapes, usage errors, exit codes, and the
//! matroid file input.

use std::process::Command;

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_plucker-tower")
}

#[test]
fn relations_reports_the_family() {
    let out = Command::new(exe())
        .args(["relations", "--d", "2", "--n", "5", "--m", "4,5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["upsilon"], 3);
    assert_eq!(v["relations"].as_array().unwrap().len(), 3);
    assert_eq!(v["main_binomials"].as_array().unwrap().len(), 6);
    assert_eq!(v["residual_binomials"].as_array().unwrap().len(), 3);

    let out = Command::new(exe())
        .args(["relations", "--d", "2", "--n", "4", "--m", "1,2"])
        .output()
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["upsilon"], 1);
}

#[test]
fn usage_errors_exit_two() {
    let out = Command::new(exe())
        .args(["relations", "--d", "4", "--n", "4", "--m", "1,2,3,4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("require 1 <= d < n"), "{err}");

    let out = Command::new(exe())
        .args(["verify", "--d", "2", "--n", "4", "--m", "1,2", "--gate", "bogus"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_pass_and_fail_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = Command::new(exe())
        .args([
            "verify", "--d", "2", "--n", "4", "--m", "1,2", "--skip-proxy",
            "--report", report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "PASS");

    // truncated pipeline fails with exit 1
    let out = Command::new(exe())
        .args([
            "verify", "--d", "2", "--n", "4", "--m", "1,2", "--gamma", "34",
            "--truncate-after", "theta", "--skip-proxy",
            "--report", report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "FAIL");
}

#[test]
fn matroid_file_input() {
    let dir = tempfile::tempdir().unwrap();
    let matroid = dir.path().join("m.json");
    std::fs::write(
        &matroid,
        r#"{"d": 2, "n": 4, "dI": {"[1,2]": 1}}"#,
    )
    .unwrap();
    let report = dir.path().join("r.json");
    let out = Command::new(exe())
        .args([
            "verify", "--d", "2", "--n", "4", "--m", "1,2",
            "--matroid", matroid.to_str().unwrap(),
            "--skip-proxy", "--report", report.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["verdict"], "PASS");
}

#[test]
fn tower_emits_charts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(exe())
        .args([
            "tower", "--d", "2", "--n", "4", "--m", "1,2",
            "--out", dir.path().to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["upsilon"], 1);
    assert_eq!(manifest["partial"], false);
    let charts = std::fs::read_dir(dir.path().join("charts")).unwrap().count();
    assert_eq!(charts as u64, manifest["final_charts"].as_u64().unwrap());
    // chart dump schema
    let first = std::fs::read_dir(dir.path().join("charts"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let chart: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first).unwrap()).unwrap();
    for key in ["id", "stage", "parent", "side", "eV", "dV", "vars", "main_binomials", "linear"] {
        assert!(chart.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn env_var_supplies_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(exe())
        .args(["tower", "--d", "2", "--n", "4", "--m", "1,2"])
        .env("PLUCKER_TOWER_OUT", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("manifest.json").exists());
}
