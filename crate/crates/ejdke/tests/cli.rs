//! End-to-end tests of the command-line interface: artifact creation, config
//! handling, and the distinct exit codes for the documented failure classes.

use std::path::Path;
use std::process::{Command, Output};

fn ejdke(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ejdke"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulate_into(dir: &Path, preset: &str, t: &str) {
    let out = ejdke(&[
        "simulate",
        "--preset",
        preset,
        "--T",
        t,
        "--dt",
        "0.05",
        "--burn-in",
        "5",
        "--seed",
        "7",
        "--out-dir",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), "radial-pushback-2", "50");
    assert!(dir.path().join("trajectory.ejdt").exists());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(v["subcommand"], "simulate");
    assert_eq!(v["master_seed"], 7);
    assert!(v["wall_time_secs"].as_f64().unwrap() >= 0.0);
}

#[test]
fn estimate_happy_path_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), "radial-pushback-2", "50");
    let traj = dir.path().join("trajectory.ejdt");
    let out = ejdke(&[
        "estimate",
        "--traj",
        traj.to_str().unwrap(),
        "--bandwidth",
        "0.5,0.5",
        "--eval-lo",
        "-1,-1",
        "--eval-hi",
        "1,1",
        "--eval-nodes",
        "8,8",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("estimate.csv").exists());
    assert!(dir.path().join("estimate.json").exists());
}

#[test]
fn estimate_with_wrong_bandwidth_dimension_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), "radial-pushback-2", "20");
    let traj = dir.path().join("trajectory.ejdt");
    let out = ejdke(&[
        "estimate",
        "--traj",
        traj.to_str().unwrap(),
        "--bandwidth",
        "0.5,0.5,0.5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn select_bandwidth_reports_member_of_grid() {
    let dir = tempfile::tempdir().unwrap();
    simulate_into(dir.path(), "radial-pushback-3", "40");
    let traj = dir.path().join("trajectory.ejdt");
    let out = ejdke(&[
        "select-bandwidth",
        "--traj",
        traj.to_str().unwrap(),
        "--grid",
        "relaxed",
        "--k",
        "2.0",
        "--k-max",
        "2",
        "--eval-nodes",
        "4,4,4",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let sel: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("selection.json")).unwrap())
            .unwrap();
    let idx = sel["selected_index"].as_u64().unwrap() as usize;
    let h = sel["entries"][idx]["h"].as_array().unwrap();
    assert_eq!(h.len(), 3);
    for v in h {
        let hv = v.as_f64().unwrap();
        let k = (1.0 / hv).round();
        assert_eq!(hv, 1.0 / k);
    }
    assert!(dir.path().join("selection.csv").exists());
}

#[test]
fn rate_experiment_rejects_short_t_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = ejdke(&[
        "rate-experiment",
        "--preset",
        "smooth-1d",
        "--gamma0",
        "0",
        "--t-grid",
        "100,200",
        "--fixed-bandwidth",
        "0.3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 3"));
}

#[test]
fn unknown_flag_exits_2() {
    let out = ejdke(&["simulate", "--no-such-flag"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unreadable_config_exits_3() {
    let out = ejdke(&["simulate", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn malformed_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{ not json").unwrap();
    let out = ejdke(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"preset": "radial-pushback-2", "total_time": 20.0, "dt": 0.05,
                 "burn_in": 2.0, "seed": 3, "out_dir": "{}"}}"#,
            dir.path().display()
        ),
    )
    .unwrap();
    let out = ejdke(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
            .unwrap();
    // flag wins over the config file
    assert_eq!(manifest["master_seed"], 9);
    assert_eq!(manifest["config"]["T"], 20.0);
}

#[test]
fn validate_model_passes_preset_and_fails_planted_violation() {
    let dir = tempfile::tempdir().unwrap();
    let out = ejdke(&[
        "validate-model",
        "--preset",
        "radial-pushback-3",
        "--probes",
        "200",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("assumptions.json").exists());

    let dir2 = tempfile::tempdir().unwrap();
    let out = ejdke(&[
        "validate-model",
        "--preset",
        "drift-outward-3",
        "--probes",
        "200",
        "--out-dir",
        dir2.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir2.path().join("assumptions.json")).unwrap())
            .unwrap();
    let failing: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| !c["passed"].as_bool().unwrap())
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failing, vec!["a2_drift_pushback"]);
}
