use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_auv-nsb"));
    c.env_remove("AUV_NSB_OUT_DIR");
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run_ok(args: &[&str], dir: &Path) -> Output {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn run_writes_csv_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["run", "--t-end", "5", "--out", "a.csv"], dir.path());
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let mut lines = csv.lines();
    let head = lines.next().unwrap();
    assert!(head.starts_with("t,x_1,y_1,z_1,theta_1,psi_1,u_1,v_1,w_1,q_1,r_1,u_d_1,theta_d_1,psi_d_1,f_u_1,t_q_1,t_r_1,x_2"));
    assert!(head.ends_with("d_1_2,d_1_3,d_2_3,colav_active"));
    assert_eq!(lines.count(), 501);

    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.metrics.json")).unwrap()).unwrap();
    assert_eq!(m["n"], 3);
    assert!((m["t_final"].as_f64().unwrap() - 5.0).abs() < 1e-9);

    // Recomputing from the CSV gives the same summary.
    run_ok(&["metrics", "a.csv", "--out", "b.json"], dir.path());
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(m["final_pbp_norm"], b["final_pbp_norm"]);
    assert_eq!(m["min_distance"], b["min_distance"]);
    assert_eq!(m["colav_intervals"], b["colav_intervals"]);
}

#[test]
fn default_output_honours_env_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--t-end", "1"])
        .env("AUV_NSB_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("spiral_three.csv").exists());
}

#[test]
fn builtin_and_file_scenarios_agree_bytewise() {
    let dir = tempfile::tempdir().unwrap();
    let file = data("spiral_three.toml");
    run_ok(&["run", "--t-end", "8", "--out", "builtin.csv"], dir.path());
    run_ok(
        &["run", "--scenario", file.to_str().unwrap(), "--t-end", "8", "--out", "file.csv"],
        dir.path(),
    );
    run_ok(&["run", "--t-end", "8", "--out", "again.csv"], dir.path());
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("builtin.csv"), read("file.csv"));
    assert_eq!(read("builtin.csv"), read("again.csv"));
}

#[test]
fn batch_runs_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let a = data("spiral_three.toml");
    let b = data("straight_single.toml");
    run_ok(
        &["run", "--t-end", "2", "--out", "batch", "--batch", a.to_str().unwrap(), b.to_str().unwrap()],
        dir.path(),
    );
    for stem in ["spiral_three", "straight_single"] {
        assert!(dir.path().join("batch").join(format!("{stem}.csv")).exists(), "{stem}");
    }
}

#[test]
fn check_reports_bound_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["check", "--out", "c.json"], dir.path());
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall"));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(r["overall_ok"], true);

    // A lookahead below the bound fails the check.
    let out = bin().args(["check", "--set", "guidance.delta0=3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    // Curvature beyond n·ratio/2 fails regardless of the lookahead.
    let out = bin().args(["check", "--ratio", "0.26", "--kappa", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| bin().args(args).current_dir(dir.path()).output().unwrap().status.code();
    assert_eq!(code(&["run", "--set", "dt=-1"]), Some(2));
    assert_eq!(code(&["run", "--set", "no_such_key=1"]), Some(2));
    assert_eq!(code(&["run", "--scenario", "/nonexistent.toml"]), Some(2));
    assert_eq!(code(&["run", "--set", "initial.theta_offset=2.1", "--t-end", "1", "--out", "x.csv"]), Some(3));
    std::fs::write(dir.path().join("bad.csv"), "a,b\n1,2\n").unwrap();
    assert_eq!(code(&["metrics", "bad.csv"]), Some(2));
}

#[test]
fn verify_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_ok(&["verify", "--samples", "200", "--out", "v.json"], dir.path());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"), "{text}");
    let v: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v.json")).unwrap()).unwrap();
    assert_eq!(v.len(), 10);
}
