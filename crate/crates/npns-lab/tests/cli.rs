//! End-to-end exercises of the command-line tool: real process invocations,
//! output files on disk, environment overrides, and cross-run determinism.

use std::path::Path;
use std::process::Command;

use npns_lab::cli::config::parse_config;
use npns_lab::cli::runner::{run, RunStatus};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_npns-lab"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const TRIVIAL_PB: &str = "\
[domain]
dim = 1
extents = [1.0]
cells = [256]

[params]
epsilon = 1.0
d1 = 1.0
d2 = 1.0

[bc]
family = \"us\"
s1 = [\"left\", \"right\"]
s2 = [\"left\", \"right\"]
gamma1 = \"1\"
gamma2 = \"1\"
w = \"0\"

[experiment]
kind = \"pb-solve\"
";

const SMALL_SWEEP: &str = "\
[domain]
dim = 1
extents = [1.0]
cells = [64]

[params]
epsilon = 1.0
d1 = 1.0
d2 = 1.0

[bc]
family = \"bl\"
w = { left = \"0.4\", right = \"-0.3\" }

[init]
c1 = \"1\"
c2 = \"1\"

[experiment]
kind = \"sweep\"
eps_list = [0.1, 0.05, 0.02]
";

const TINY_DECAY: &str = "\
[domain]
dim = 1
extents = [1.0]
cells = [32]

[params]
epsilon = 0.1
d1 = 1.0
d2 = 1.0

[bc]
family = \"en\"
w = \"0\"

[time]
dt_max = 1e-3
t_end = 0.1
output_every = 2e-3

[init]
c1 = \"1 + 0.01 * sin(pi * x)\"
c2 = \"1 - 0.01 * sin(pi * x)\"

[experiment]
kind = \"decay-study\"
";

#[test]
fn the_binary_solves_and_reports_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRIVIAL_PB);
    let out = dir.path().join("run");
    let result = bin()
        .args(["pb-solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("pb_solve.csv"), "stdout: {stdout}");
    assert!(out.join("pb_solve.csv").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"ok\""));
}

#[test]
fn the_environment_variable_redirects_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRIVIAL_PB);
    let flag_dir = dir.path().join("flagged");
    let env_dir = dir.path().join("redirected");
    let result = bin()
        .args(["pb-solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .env("NPNS_LAB_OUT", &env_dir)
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    assert!(env_dir.join("pb_solve.csv").exists());
    assert!(!flag_dir.exists());
}

#[test]
fn subcommand_and_config_kind_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TRIVIAL_PB);
    let result = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("pb-solve") && stderr.contains("simulate"), "stderr: {stderr}");
}

#[test]
fn the_invariant_battery_passes_from_the_command_line() {
    let result = bin().args(["check", "--seed", "7"]).output().unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok ")).count(), 20, "{stdout}");
    assert!(stdout.contains("all 20 checks passed"));
}

#[test]
fn sweeps_are_identical_across_worker_counts() {
    let cfg = parse_config(SMALL_SWEEP).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let one = run(&cfg, d1.path(), 1).unwrap();
    let two = run(&cfg, d2.path(), 2).unwrap();
    assert_eq!(one.status, RunStatus::Ok);
    assert_eq!(two.status, RunStatus::Ok);
    let a = std::fs::read(d1.path().join("sweep.csv")).unwrap();
    let b = std::fs::read(d2.path().join("sweep.csv")).unwrap();
    assert_eq!(a, b, "worker count changed the table bytes");
    let svg_a = std::fs::read(d1.path().join("sweep.svg")).unwrap();
    let svg_b = std::fs::read(d2.path().join("sweep.svg")).unwrap();
    assert_eq!(svg_a, svg_b, "worker count changed the plot bytes");
}

#[test]
fn a_decay_study_writes_trajectory_fit_and_plot() {
    let cfg = parse_config(TINY_DECAY).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&cfg, dir.path(), 1).unwrap();
    assert_eq!(outcome.status, RunStatus::Ok);
    assert_eq!(outcome.files, vec!["trajectory.csv", "fit.csv", "decay.svg"]);
    let fit = std::fs::read_to_string(dir.path().join("fit.csv")).unwrap();
    let mut lines = fit.lines();
    assert_eq!(lines.next().unwrap(), "lambda,c,window_t0,window_t1,fit_residual,n_points");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let lambda: f64 = row[0].parse().unwrap();
    // The configured problem relaxes at a rate near pi^2 + mean salt over
    // permittivity; here that is about 30. The tiny run only sanity-checks
    // the plumbing, so accept a generous band.
    assert!(lambda > 10.0 && lambda < 60.0, "fitted rate {lambda}");
    let svg = std::fs::read_to_string(dir.path().join("decay.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}
