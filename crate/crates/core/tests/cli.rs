use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONTACT: &str = "\
[problem]
nx = 24
n_membranes = 2
p = 2
t_final = 0.05
dt = 1e-2
epsilon = 1e-4
snapshot_times = 0.02, 0.05

[source.1]
term = sinprod -6 2

[source.2]
term = sinprod 6 2
";

fn run(args: &[&str], config: &str, dir: &Path) -> Output {
    let cfg = dir.join("problem.ini");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    Command::new(env!("CARGO_BIN_EXE_nmembranes"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn solve_writes_reproducible_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run(&["solve"], CONTACT, a.path()).status.success());
    assert!(run(&["solve"], CONTACT, b.path()).status.success());
    for name in ["snapshot_000.csv", "snapshot_001.csv", "timeseries.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let snap = read(a.path(), "snapshot_001.csv");
    assert_eq!(snap.lines().next().unwrap(), "x,u_1,u_2,chi_1_2");
    assert_eq!(snap.lines().count(), 25);
    let series = read(a.path(), "timeseries.csv");
    assert!(series.starts_with("t,l2_u_1,l2_u_2,grad_p_u_1,grad_p_u_2,ordering_defect,ls_violation,area_chi_1_2\n"));
    assert_eq!(series.lines().count(), 7);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = format!("{CONTACT}\n[source.3]\nterm = const 1\n");
    let out = run(&["solve"], &bad, dir.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nonexistent component"), "{err}");
}

#[test]
fn sweeps_match_across_job_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |jobs: &'static str| ["oracle-compare", "--eps-list", "1e-3,5e-4", "--p-list", "2,3", "--jobs", jobs];
    assert!(run(&args("1"), CONTACT, a.path()).status.success());
    assert!(run(&args("3"), CONTACT, b.path()).status.success());
    let table = read(a.path(), "oracle_compare.csv");
    assert_eq!(table, read(b.path(), "oracle_compare.csv"));
    assert_eq!(table.lines().count(), 5);

    let perturb = |jobs: &'static str| ["perturb", "--delta", "0.4", "--halvings", "2", "--jobs", jobs];
    assert!(run(&perturb("1"), CONTACT, a.path()).status.success());
    assert!(run(&perturb("2"), CONTACT, b.path()).status.success());
    assert_eq!(read(a.path(), "perturb.csv"), read(b.path(), "perturb.csv"));
}

#[test]
fn verify_and_stationary_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--no-refine"], CONTACT, dir.path());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.lines().all(|l| l.starts_with("PASS")), "{stdout}");
    assert!(run(&["stationary"], CONTACT, dir.path()).status.success());
    assert!(read(dir.path(), "snapshot_stationary.csv").starts_with("x,u_1,u_2,chi_1_2\n"));
}

#[test]
fn asymptotic_reports_gating() {
    let dir = tempfile::tempdir().unwrap();
    let degenerate = CONTACT.replace("sinprod -6 2", "sinprod 6 2");
    let out = run(&["asymptotic", "--check-interval", "0.02"], &degenerate, dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mask convergence not asserted"));
    let series = read(dir.path(), "timeseries.csv");
    assert!(series.lines().next().unwrap().ends_with(",distance_to_stationary"));
}
