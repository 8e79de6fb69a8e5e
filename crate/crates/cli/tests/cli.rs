use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn hlab")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn b2p_prints_55() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hlab(tmp.path(), &["b2p", "--p", "3", "--out", "b"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("B_6 = 55 (brute force agrees)"), "{}", stdout(&o));
    assert!(tmp.path().join("b/b2p.json").exists());
    assert!(tmp.path().join("b/manifest.json").exists());
}

#[test]
fn even_nonlinearity_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hlab(tmp.path(), &["solve-nlsh", "--p", "4", "--out", "s"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonlinearity_p must be odd ≥ 5"), "{}", stderr(&o));
    let err = fs::read_to_string(tmp.path().join("s/error.json")).unwrap();
    assert!(err.contains("invalid_parameter"));
}

#[test]
fn basis_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hlab(tmp.path(), &["basis-check", "--tier", "reference", "--cache-dir", "cache"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("[PASS] gram_deviation"));
    assert!(tmp.path().join("cache/basis_d1_n64_q256.bin").exists());
    // second run reads the cache
    let o = hlab(tmp.path(), &["basis-check", "--tier", "reference", "--cache-dir", "cache"]);
    assert!(o.status.success());
}

#[test]
fn config_file_and_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), "seed = 7\n[solver]\nN = 16\ntime_nodes = 33\n").unwrap();
    let o = hlab(
        tmp.path(),
        &["--config", "run.toml", "--set", "solver.N=24", "solve-nlsh", "--out", "r"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["config"]["solver"]["N"], 24);
    assert_eq!(m["config"]["solver"]["time_nodes"], 33);

    let o = hlab(tmp.path(), &["--set", "experiment.nope=1", "b2p"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"), "{}", stderr(&o));
}

#[test]
fn resume_reproduces_a_fresh_solve() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hlab(tmp.path(), &["solve-nlsh", "--amplitude", "2", "--out", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = hlab(
        tmp.path(),
        &["solve-nlsh", "--amplitude", "2", "--resume", "a/checkpoint.bin", "--out", "b"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(tmp.path().join("a/solve_nlsh.json")).unwrap();
    let b = fs::read(tmp.path().join("b/solve_nlsh.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn worker_count_does_not_change_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for w in ["1", "3"] {
        let o = hlab(
            tmp.path(),
            &["omega", "--samples", "1000", "--workers", w, "--out", &format!("w{w}")],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(tmp.path().join("w1/omega_t.json")).unwrap();
    let b = fs::read(tmp.path().join("w3/omega_t.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn acceptance_subset() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hlab(tmp.path(), &["acceptance", "--tier", "smoke", "--only", "1,9", "--out", "acc"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.contains("PASS [ 1] basis_fidelity") && out.contains("PASS [ 9] b2p_combinatorics"), "{out}");
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("acc/acceptance.json")).unwrap()).unwrap();
    assert_eq!(s["passed"], true);
}
