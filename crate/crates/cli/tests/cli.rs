use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn trajsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajsync")).args(args).output().expect("binary runs")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, json: serde_json::Value) -> PathBuf {
    let p = dir.join("sim.json");
    std::fs::write(&p, json.to_string()).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_solve_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({
        "scene": {"preset": "replica", "order": 1, "targets": 2, "offset_frames": 4}
    }));
    let data = dir.path().join("data.json");
    let est = dir.path().join("est.json");
    let o = trajsync(&["simulate", "--config", s(&cfg), "--seed", "3", "--out", s(&data)]);
    assert!(o.status.success(), "{o:?}");

    let o = trajsync(&["solve", "--method", "alg1", "--order", "1", "--data", s(&data), "--out", s(&est)]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("camera 1: fps 10.0000000 offset 0.400000000 s"), "{}", stdout(&o));

    let o = trajsync(&["eval", "--est", s(&est), "--truth", s(&data), "--grid", "50"]);
    assert!(o.status.success(), "{o:?}");
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "target,sigma_x_m,sigma_y_m,sigma_z_m,sigma_3d_m");
    for _ in 0..2 {
        let sigma: f64 = lines.next().unwrap().rsplit(',').next().unwrap().parse().unwrap();
        assert!(sigma < 1e-6, "{text}");
    }
}

#[test]
fn solve_accepts_per_target_orders_and_rotation_prior() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.json");
    let est = dir.path().join("est.json");
    let cfg = configs().join("replica_4targets.json");
    assert!(trajsync(&["simulate", "--config", s(&cfg), "--seed", "1", "--out", s(&data)]).status.success());
    let o = trajsync(&[
        "solve", "--method", "alg2", "--order", "1,1,1,1", "--data", s(&data), "--out", s(&est),
        "--optimize-fps", "--rotation-prior", "100",
    ]);
    assert!(o.status.success(), "{o:?}");
    let file: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&est).unwrap()).unwrap();
    assert_eq!(file["method"], "alg2");
    assert_eq!(file["trajectories"].as_array().unwrap().len(), 4);
    assert!(file["rotations"].as_array().unwrap().len() == 100);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = dir.path().join("o.json");
    assert_eq!(trajsync(&["solve", "--method", "alg7", "--order", "1", "--data", "x", "--out", "y"]).status.code(), Some(2));
    assert_eq!(trajsync(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        trajsync(&["solve", "--method", "li", "--order", "1", "--data", s(&missing), "--out", s(&out)]).status.code(),
        Some(2)
    );
    assert_eq!(trajsync(&["simulate", "--config", s(&missing), "--seed", "1", "--out", s(&out)]).status.code(), Some(2));
}

#[test]
fn underdetermined_problems_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"scene": {"preset": "replica", "targets": 1}}));
    let data = dir.path().join("data.json");
    let out = dir.path().join("o.json");
    assert!(trajsync(&["simulate", "--config", s(&cfg), "--seed", "0", "--out", s(&data)]).status.success());
    let o = trajsync(&["solve", "--method", "alg2", "--order", "1", "--data", s(&data), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{o:?}");
    assert!(String::from_utf8_lossy(&o.stderr).contains("underdetermined"));
}

#[test]
fn eval_needs_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), serde_json::json!({"scene": {"preset": "replica"}}));
    let data = dir.path().join("data.json");
    let est = dir.path().join("est.json");
    assert!(trajsync(&["simulate", "--config", s(&cfg), "--seed", "0", "--out", s(&data)]).status.success());
    assert!(trajsync(&["solve", "--method", "multi-ti", "--order", "1", "--data", s(&data), "--out", s(&est)]).status.success());
    let mut doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&data).unwrap()).unwrap();
    doc.as_object_mut().unwrap().remove("ground_truth");
    let bare = dir.path().join("bare.json");
    std::fs::write(&bare, doc.to_string()).unwrap();
    assert_eq!(trajsync(&["eval", "--est", s(&est), "--truth", s(&bare), "--grid", "10"]).status.code(), Some(2));
    assert_eq!(trajsync(&["eval", "--est", s(&est), "--truth", s(&data), "--grid", "1"]).status.code(), Some(2));
}

#[test]
fn bench_writes_deterministic_tables() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(configs().join("noise_high.json"), dir.path().join("noise_high.json")).unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        serde_json::json!({
            "scene": {"preset": "replica", "targets": 1},
            "noise": "noise_high.json",
            "estimators": ["multi-ti", "alg1"],
            "offsets": [1, 4],
            "trials": 5,
            "seed": 7
        })
        .to_string(),
    )
    .unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = trajsync(&["bench", "--spec", s(&spec), "--out-dir", s(&a)]);
    assert!(o.status.success(), "{o:?}");
    assert!(trajsync(&["bench", "--spec", s(&spec), "--out-dir", s(&b), "--parallel", "2"]).status.success());
    for name in ["offset_curve.csv", "error_curve.csv", "trajectory_overlay.csv"] {
        let x = std::fs::read_to_string(a.join(name)).unwrap();
        let y = std::fs::read_to_string(b.join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let curve = std::fs::read_to_string(a.join("offset_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 4);
    let trials = std::fs::read_to_string(a.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 5 * 2);
}

#[test]
fn bench_rejects_bad_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"scene": {"preset": "replica"}, "noise": "missing.json", "estimators": ["alg1"], "offsets": [1]}"#,
    )
    .unwrap();
    let o = trajsync(&["bench", "--spec", s(&spec), "--out-dir", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
}
