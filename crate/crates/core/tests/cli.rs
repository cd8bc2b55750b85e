//! End-to-end checks of the command-line interface: the ic -> run ->
//! analyze pipeline, exit-code contract, and format selection.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tasksph::io::snapshot::Snapshot;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tasksph")
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tasksph-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cmd(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("spawning the CLI")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sod_pipeline_runs_end_to_end() {
    let dir = workdir("sod");
    let snap = dir.join("sod.snap");
    let cfg = dir.join("sod.cfg");
    let final_snap = dir.join("sod_final.snap");
    let timeline = dir.join("timeline.txt");
    let profile = dir.join("profile.txt");

    let out = run_cmd(&["ic", "--case", "sod", "--n", "4320", "--out", path_str(&snap)]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("4320 particles"), "{stdout}");
    assert!(cfg.is_file());
    assert_eq!(Snapshot::read(&snap).unwrap().rows.len(), 4320);

    let out = run_cmd(&[
        "run",
        "--config",
        path_str(&cfg),
        "--threads",
        "2",
        "--t-end",
        "0.02",
        "--timeline",
        path_str(&timeline),
    ]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("run finished"), "{stdout}");
    let result = Snapshot::read(&final_snap).unwrap();
    assert_eq!(result.rows.len(), 4320);
    assert!(result.t >= 0.02);
    let tl = std::fs::read_to_string(&timeline).unwrap();
    assert!(tl.lines().count() > 1, "timeline empty:\n{tl}");
    assert!(tl.lines().any(|l| l.contains(" ghost ")), "{tl}");

    let out = run_cmd(&[
        "analyze",
        "--case",
        "sod",
        "--snap",
        path_str(&final_snap),
        "--out",
        path_str(&profile),
    ]);
    let stdout = assert_ok(&out);
    assert!(stdout.contains("L1 rho="), "{stdout}");
    let prof = std::fs::read_to_string(&profile).unwrap();
    assert!(prof.lines().count() > 100);

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn ic_rounds_odd_requests_with_a_warning() {
    let dir = workdir("warn");
    let snap = dir.join("odd.snap");
    let out = run_cmd(&["ic", "--case", "sod", "--n", "4000", "--out", path_str(&snap)]);
    assert_ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning"), "{stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn binary_snapshots_flow_through_the_pipeline() {
    let dir = workdir("bin");
    let snap = dir.join("grid.bin");
    let out = run_cmd(&["ic", "--case", "grid", "--n", "512", "--out", path_str(&snap)]);
    assert_ok(&out);
    let bytes = std::fs::read(&snap).unwrap();
    assert!(bytes.starts_with(b"TSPH0001"));

    let cfg = dir.join("grid.cfg");
    let out = run_cmd(&[
        "run",
        "--config",
        path_str(&cfg),
        "--t-end",
        "0.01",
        "--snap-every",
        "1",
    ]);
    assert_ok(&out);
    let final_path = dir.join("grid_final.bin");
    let result = Snapshot::read(&final_path).unwrap();
    assert_eq!(result.rows.len(), 512);
    // Numbered intermediates keep the binary extension.
    let step1 = dir.join("grid_final_step000001.bin");
    assert!(step1.is_file(), "missing {}", step1.display());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sedov_ic_reports_blast_energy() {
    let dir = workdir("sedov");
    let snap = dir.join("blast.snap");
    let out = run_cmd(&["ic", "--case", "sedov", "--n", "5", "--out", path_str(&snap)]);
    let stdout = assert_ok(&out);
    let e_line = stdout.lines().find(|l| l.starts_with("e_blast")).unwrap();
    let e: f64 = e_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((e - 26.0 / 125.0 * 148.5).abs() < 1e-12);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn usage_errors_exit_two() {
    for args in [&[][..], &["frobnicate"][..], &["ic", "--case", "sod"][..]] {
        let out = run_cmd(args);
        assert_eq!(out.status.code(), Some(2), "args {args:?}");
    }
}

#[test]
fn runtime_errors_exit_one() {
    let out = run_cmd(&["run", "--config", "/nonexistent/x.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let dir = workdir("err");
    let snap = dir.join("even.snap");
    let out = run_cmd(&["ic", "--case", "sedov", "--n", "6", "--out", path_str(&snap)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("odd"));
    std::fs::remove_dir_all(&dir).ok();
}
