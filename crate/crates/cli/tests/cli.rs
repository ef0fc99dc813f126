use std::fs;
use std::path::Path;
use std::process::Command;

const SMALL: &str = "preset = cross-roll\nK = 2\nNz = 32\nT = 0.01\ndt = 1e-3\nsnapshot_every = 5\n";

fn run(cmd: &str, config: &str, out: &Path, extra: &[&str]) -> i32 {
    let cfg = out.with_extension("cfg");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_halfspace-vortex"))
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env("RUST_LOG", "off")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn solve_writes_dumps_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("solve");
    assert_eq!(run("solve", SMALL, &out, &["--jobs", "1"]), 0);
    for f in ["omega_0000.csv", "omega_0000.json", "energy.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("omega_0000.csv")).unwrap();
    assert!(csv.starts_with("xi1,xi2,component,z_index,re,im\n"));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("config_hash"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run("solve", SMALL, &a, &[]), 0);
    assert_eq!(run("solve", SMALL, &b, &["--jobs", "2"]), 0);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn norms_of_a_dump() {
    let dir = tempfile::tempdir().unwrap();
    let solve = dir.path().join("solve");
    assert_eq!(run("solve", SMALL, &solve, &[]), 0);
    let dump = solve.join("omega_0000.csv");
    let out = dir.path().join("norms");
    assert_eq!(run("norms", SMALL, &out, &["--in", dump.to_str().unwrap()]), 0);
    assert!(out.join("norm_report.json").exists());
    assert!(out.join("norm_table.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run("solve", "K = 2\nbogus = 1\n", &out, &[]), 2);
    assert_eq!(run("solve", "K = two\n", &out, &[]), 2);
    assert_eq!(run("solve", "K = 2\nK = 3\n", &out, &[]), 2);
    assert_eq!(run("solve", "preset = vortex-ring\n", &out, &[]), 2);
    assert_eq!(run("solve", "nu = -1\n", &out, &[]), 2);
    let status = Command::new(env!("CARGO_BIN_EXE_halfspace-vortex"))
        .args(["solve", "--config", "/nonexistent/cfg"])
        .env("RUST_LOG", "off")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn blow_up_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    assert_eq!(run("solve", "K = 2\nNz = 32\nT = 0.01\namplitude = 1e300\n", &out, &[]), 3);
}
