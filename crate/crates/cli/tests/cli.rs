use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_grushin-mfg"))
}

fn default_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../default.cfg")
}

fn run(out: &Path, args: &[&str]) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest_path(o: &Output) -> PathBuf {
    let stdout = String::from_utf8_lossy(&o.stdout);
    PathBuf::from(stdout.lines().last().expect("manifest path printed"))
}

fn manifest(o: &Output) -> Value {
    serde_json::from_str(&std::fs::read_to_string(manifest_path(o)).unwrap()).unwrap()
}

#[test]
fn default_mfg_run_writes_the_csv_series() {
    let out = tempfile::tempdir().unwrap();
    let cfg = default_cfg();
    let o = run(out.path(), &["mfg", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = manifest(&o);
    assert_eq!(m["config"]["grid.n1"], "32");
    assert_eq!(m["config"]["time.nt"], "64");
    assert!(m["constants"]["final_residual"].as_f64().unwrap() <= 1e-8);
    let dir = manifest_path(&o).parent().unwrap().to_path_buf();
    for field in ["u", "m"] {
        let sub = dir.join(field);
        assert!(sub.join(format!("{field}_00000.csv")).exists());
        assert!(sub.join(format!("{field}_00064.csv")).exists());
        assert!(sub.join(format!("{field}_manifest.json")).exists());
    }
    assert!(dir.join("timings.json").exists());
}

#[test]
fn unknown_key_exits_with_code_two_and_names_it() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["mfg", "--set", "grid.spacing=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.spacing"));
}

#[test]
fn invalid_values_exit_with_code_two() {
    let out = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "grid.n1 = 16\nsolver.theta = 1.5\n").unwrap();
    let o = run(out.path(), &["hjb", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("solver.theta"));
    let o = run(out.path(), &["master-kernel", "--set", "grid.n1=32"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.n1"));
}

#[test]
fn thread_cap_must_be_a_positive_integer() {
    let out = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["hjb", "--set", "grid.n1=8", "--set", "grid.n2=8", "--out"])
        .arg(out.path())
        .env("GRUSHIN_MFG_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("GRUSHIN_MFG_THREADS"));
}

#[test]
fn solver_failure_exits_with_code_three_and_a_diagnostic() {
    let out = tempfile::tempdir().unwrap();
    let o = run(out.path(), &["mfg", "--set", "grid.n1=16", "--set", "grid.n2=16", "--set", "solver.max_iter=2"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    let path = err.lines().find_map(|l| l.strip_prefix("diagnostics: ")).expect("diagnostic path");
    let diag: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(diag["error"].as_str().unwrap().contains("did not converge"));
}

#[test]
fn ccdist_reports_square_root_scaling_on_the_chart() {
    let out = tempfile::tempdir().unwrap();
    let o = run(
        out.path(),
        &["ccdist", "--set", "grid.profile=ChartGrushin", "--set", "grid.n1=64", "--set", "grid.n2=64"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let exponent = manifest(&o)["constants"]["x2_axis_exponent"].as_f64().unwrap();
    assert!((exponent - 0.5).abs() <= 0.05, "{exponent}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("d_cc/sqrt"));
}

#[test]
fn identical_config_gives_identical_manifests_and_directories() {
    let out = tempfile::tempdir().unwrap();
    let args = ["linearize", "--set", "grid.n1=12", "--set", "grid.n2=12", "--set", "seed=5"];
    let a = run(out.path(), &args);
    let first = std::fs::read(manifest_path(&a)).unwrap();
    let b = run(out.path(), &args);
    assert_eq!(manifest_path(&a), manifest_path(&b));
    assert_eq!(first, std::fs::read(manifest_path(&b)).unwrap());
    let c = run(out.path(), &["linearize", "--set", "grid.n1=12", "--set", "grid.n2=12", "--set", "seed=6"]);
    assert_ne!(manifest_path(&a), manifest_path(&c));
}

#[test]
fn every_subcommand_runs_on_a_small_grid() {
    let out = tempfile::tempdir().unwrap();
    for cmd in ["wasserstein", "hjb", "kfp", "linearize", "master-kernel", "master-residual"] {
        let o = run(out.path(), &[cmd, "--set", "grid.n1=8", "--set", "grid.n2=8"]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        assert_eq!(manifest(&o)["command"], cmd);
    }
}
