use std::path::Path;
use std::process::{Command, Output};

fn mkvfbsde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mkvfbsde"))
        .args(args)
        .env_remove("MKVFBSDE_PROBLEM")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn solve_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = mkvfbsde(&[
        "solve",
        "--problem",
        "decoupled?c=0.5",
        "--set",
        "solver.particles=200",
        "--seed",
        "1",
        "--threads",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "convergence.csv",
        "field.csv",
        "flow_summary.csv",
        "plot.csv",
        "manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let plot = std::fs::read_to_string(out.join("plot.csv")).unwrap();
    assert_eq!(
        plot.lines().next().unwrap(),
        "t,mean_x_1,mean_y_1,ref_x_1,ref_y_1,w2_to_ref"
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "converged");
    assert_eq!(manifest["exit_code"], 0);
}

#[test]
fn exit_codes() {
    let err = mkvfbsde(&["validate", "--problem", "counterexample?R=1"]);
    assert_eq!(code(&err), 1);
    let typo = mkvfbsde(&["validate", "--problem", "counterexampel"]);
    assert_eq!(code(&typo), 1);
    assert!(String::from_utf8_lossy(&typo.stderr).contains("counterexample"));
    let usage = mkvfbsde(&["solve", "--bogus"]);
    assert_eq!(code(&usage), 1);
    let clean = mkvfbsde(&[
        "validate",
        "--problem",
        "counterexample",
        "--set",
        "probe.samples=200",
    ]);
    assert_eq!(
        code(&clean),
        0,
        "{}",
        String::from_utf8_lossy(&clean.stderr)
    );
    let warn = mkvfbsde(&[
        "validate",
        "--problem",
        "scalar-linear?b=2&L=1",
        "--set",
        "probe.samples=200",
    ]);
    assert_eq!(code(&warn), 2);
    let degenerate = mkvfbsde(&[
        "validate",
        "--problem",
        "scalar-linear?sigma=0",
        "--set",
        "probe.samples=200",
    ]);
    assert_eq!(code(&degenerate), 1);
}

fn write_cloud(path: &Path, rows: &[f64]) {
    let body: String = rows.iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(path, format!("x_1\n{body}")).unwrap();
}

#[test]
fn w2_between_csv_clouds() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_cloud(&a, &[0.0, 1.0, 2.0]);
    write_cloud(&b, &[3.0, 4.0, 5.0]);
    let o = mkvfbsde(&[
        "w2",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((v["w2"].as_f64().unwrap() - 3.0).abs() < 1e-12, "{v}");
}
