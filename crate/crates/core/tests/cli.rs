use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn encopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_encopt")).args(args).output().unwrap()
}

fn run_with(dir: &Path, study: &str, config: &str, seed: Option<&str>) -> (i32, Output) {
    let cfg = dir.join("c.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec![study, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    if let Some(s) = seed {
        args.extend(["--seed", s]);
    }
    let o = encopt(&args);
    (o.status.code().unwrap(), o)
}

#[test]
fn forward_writes_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let (code, o) = run_with(dir.path(), "forward", "mesh.n = 3", Some("5"));
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("out/forward.csv")).unwrap();
    assert!(csv.starts_with("source,receiver,x,y,clean,noisy\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * 20);
    let meta = fs::read_to_string(dir.path().join("out/forward.meta")).unwrap();
    assert!(meta.lines().any(|l| l == "seed_noise = 5"));
    assert!(meta.lines().all(|l| l.contains(" = ")));
    assert!(meta.lines().any(|l| l == "total_forward_solves = 4"));
}

#[test]
fn configuration_problems_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_with(dir.path(), "forward", "mesh.n = 3\nmesh.typo = 1", Some("1")).0, 2);
    assert_eq!(run_with(dir.path(), "forward", "mesh.n = 3", None).0, 2);
    let missing = dir.path().join("absent.toml");
    let o = encopt(&["map", "--config", missing.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let (code, o) = run_with(dir.path(), "map", "mesh.n = 4\nmap.max_iters = 1", Some("1"));
    assert_eq!(code, 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_checks_exit_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "mesh.n = 3\ngradcheck.directions = 1\ngradcheck.n_w = 1\ngradcheck.n_tr = 2\ngradcheck.corrupt = true";
    let (code, o) = run_with(dir.path(), "gradcheck", cfg, Some("1"));
    assert_eq!(code, 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FAIL"));
    assert!(dir.path().join("out/gradcheck.csv").exists());
}

#[test]
fn unknown_subcommands_are_usage_errors() {
    assert_eq!(encopt(&["frobnicate"]).status.code(), Some(2));
    assert!(encopt(&["--help"]).status.success());
}
