use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str], config: &str) -> Output {
    let cfg = dir.join("run.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_proxsweep"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn certify_moving_ball_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["certify", "--out", "o"],
        r#"{"family": {"family": "moving_ball", "n": 2, "rho": 1.0},
            "u": {"nodes": [0, 1], "values": [[0, 0], [0, 0]]}, "x0": [0, 0]}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["passed"], true);
    let c = v["report"]["certified"]["c"].as_f64().unwrap();
    assert!((1.8..=2.0).contains(&c), "{c}");
}

#[test]
fn coarse_grid_violates_the_gate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve", "--grid-n", "50", "--out", "o"], r#"{"benchmark": {"name": "star_drag"}}"#);
    assert_eq!(code(&o), 2);
    let e = stderr(&o);
    assert!(e.contains("sweep gate") && e.contains("--grid-n"), "{e}");
    assert!(!dir.path().join("o/trajectory.csv").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve"], "{\n\"benchmark\": {\"name\": \"play_ramp\"},\n\"gird_n\": 5}");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    let o = run(dir.path(), &["solve"], r#"{"family": {"family": "scalar_play", "rho": 1.0}, "u": {"nodes": [0, 1], "values": [[0], [1]]}}"#);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("x0"), "{}", stderr(&o));
}

#[test]
fn solve_custom_play_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("u.csv"), "t,v0\n0,0\n1,2\n").unwrap();
    let o = run(
        dir.path(),
        &["solve", "--grid-n", "100", "--scheme", "boundary-ode", "--out", "o"],
        r#"{"family": {"family": "scalar_play", "rho": 1.0}, "u_file": "u.csv", "x0": [0]}"#,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let last = rows.records().last().unwrap().unwrap();
    // x = u - 1 after contact at t = 1/2.
    let x: f64 = last[1].parse().unwrap();
    assert!((x - 1.0).abs() < 1e-9, "{x}");
    let report = fs::read_to_string(dir.path().join("o/report.json")).unwrap();
    assert!(report.contains("\"boundary-ode\""));
}

#[test]
fn continuity_study_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["study", "--kind", "continuity", "--out", "o"], r#"{"benchmark": {"name": "play_ramp"}}"#);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("o/study.csv")).unwrap();
    assert!(text.starts_with("scale,input_distance,output_distance,ratio"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn implicit_benchmark_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve-implicit", "--grid-n", "200", "--out", "o"], r#"{"benchmark": {"name": "implicit_play"}}"#);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("o/report.json")).unwrap()).unwrap();
    assert_eq!(v["iteration"]["converged"], true);
    assert!(v["iteration"]["iterations"].as_u64().unwrap() <= v["iteration"]["budget"].as_u64().unwrap());
    assert!(dir.path().join("o/w.csv").exists());
}

#[test]
fn state_map_that_does_not_contract_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["solve-implicit"],
        r#"{"family": {"family": "scalar_play", "rho": 1.0}, "u": {"nodes": [0, 1], "values": [[0], [1]]},
            "x0": [0], "state_map": {"kind": "linear", "gamma": [5.0]}}"#,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("contraction"), "{}", stderr(&o));
}

#[test]
fn order_study_on_play_uses_the_exact_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["study", "--out", "o"], r#"{"benchmark": {"name": "play_ramp"}, "study": {"kind": "order"}}"#);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("exact play"));
    assert_eq!(fs::read_to_string(dir.path().join("o/order.csv")).unwrap().lines().count(), 4);
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"benchmark": {"name": "star_drag"}, "grid_n": 200, "study": {"scales": [0.01, 0.005]}}"#;
    let a = run(dir.path(), &["study", "--kind", "lipschitz", "--seed", "9", "--out", "a"], cfg);
    let b = run(dir.path(), &["study", "--kind", "lipschitz", "--seed", "9", "--out", "b"], cfg);
    assert_eq!((code(&a), code(&b)), (0, 0), "{}", stderr(&a));
    for f in ["study.csv", "report.json"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
    let c = run(dir.path(), &["study", "--kind", "lipschitz", "--seed", "10", "--out", "c"], cfg);
    assert_eq!(code(&c), 0);
    assert_ne!(fs::read(dir.path().join("a/study.csv")).unwrap(), fs::read(dir.path().join("c/study.csv")).unwrap());
}
