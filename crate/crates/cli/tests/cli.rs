use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sweepopt::io::{parse_control_csv, parse_trajectory_csv};
use tempfile::TempDir;

fn sweepopt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sweepopt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn sweepopt")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let j = header.iter().position(|h| *h == name).unwrap();
    lines
        .map(|l| l.split(',').nth(j).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn simulate_reference_ends_near_top_of_circle() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["simulate", "--gamma", "1e4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = parse_trajectory_csv(&read(tmp.path(), "out/trajectory.csv"), "trajectory.csv").unwrap();
    let last = table.states.last().unwrap();
    assert!(last[0].abs() <= 0.02 && (last[1] - 1.0).abs() <= 0.02, "{last:?}");
    let inv: serde_json::Value = serde_json::from_str(&read(tmp.path(), "out/invariants.json")).unwrap();
    assert!(inv["max_psi"].as_f64().unwrap() <= 1e-8);
    assert!(inv["max_xi"].as_f64().unwrap() <= inv["xi_bound"].as_f64().unwrap());
}

#[test]
fn simulate_deep_interior_is_unconstrained_flow() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(
        tmp.path(),
        &["simulate", "--set", "instance=interior_drift", "--set", "grid.n=50", "--gamma", "100"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = parse_trajectory_csv(&read(tmp.path(), "out/trajectory.csv"), "trajectory.csv").unwrap();
    for (t, x) in table.grid.iter().zip(&table.states) {
        assert!((x[0] - t).abs() < 1e-12 && (x[1] - 0.5 * t).abs() < 1e-12);
    }
    assert!(table.xi.iter().all(|&v| v < 1e-12));
}

#[test]
fn gamma_below_threshold_is_config_violation() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["simulate", "--gamma", "5"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let out = sweepopt(tmp.path(), &["optimize", "--set", "schedule.gamma0=5"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn bad_configuration_is_exit_three() {
    let tmp = TempDir::new().unwrap();
    for args in [
        vec!["simulate", "--set", "grid.n=0"],
        vec!["simulate", "--set", "no.such.key=1"],
        vec!["sweep", "--set", "instance=interior_drift"],
        vec!["simulate", "--set", "instance=nowhere"],
        vec!["certify"],
        vec!["frobnicate"],
    ] {
        let out = sweepopt(tmp.path(), &args);
        assert_eq!(code(&out), 3, "{args:?}: {}", stderr(&out));
    }
}

#[test]
fn config_file_is_read_and_overridden() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("run.cfg"), "# small run\ngrid.n = 40\noutput.dir = from_file\n").unwrap();
    let out = sweepopt(
        tmp.path(),
        &["simulate", "--config", "run.cfg", "--set", "output.dir=override", "--gamma", "50"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = read(tmp.path(), "override/trajectory.csv");
    assert_eq!(csv.lines().count(), 42);
    assert!(!tmp.path().join("from_file").exists());
}

#[test]
fn malformed_inputs_are_exit_five() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("bad.csv"), "t,u1\n0,1\n0.5,abc\n").unwrap();
    let out = sweepopt(tmp.path(), &["simulate", "--control", "bad.csv"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("bad.csv:3"), "{}", stderr(&out));

    let out = sweepopt(tmp.path(), &["simulate", "--control", "missing.csv"]);
    assert_eq!(code(&out), 5);

    fs::write(tmp.path().join("m.json"), "{").unwrap();
    fs::write(tmp.path().join("x.csv"), "t,x1,x2,u1,xi\n0,1,0,0,0\n0.1,nan,0,0,0\n").unwrap();
    let out = sweepopt(tmp.path(), &["certify", "--trajectory", "x.csv", "--multipliers", "m.json"]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("x.csv:3"), "{}", stderr(&out));
}

#[test]
fn simulate_accepts_control_file() {
    let tmp = TempDir::new().unwrap();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * std::f64::consts::FRAC_PI_2 / 100.0).collect();
    let mut csv = String::from("t,u1\n");
    for t in &grid {
        csv.push_str(&format!("{t:.17e},{t:.17e}\n"));
    }
    fs::write(tmp.path().join("u.csv"), csv).unwrap();
    let out = sweepopt(tmp.path(), &["simulate", "--control", "u.csv", "--gamma", "1e3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = parse_trajectory_csv(&read(tmp.path(), "out/trajectory.csv"), "trajectory.csv").unwrap();
    assert_eq!(table.grid.len(), 101);
    let last = table.states.last().unwrap();
    assert!(last[0].abs() <= 0.02 && (last[1] - 1.0).abs() <= 0.02, "{last:?}");
}

#[test]
fn optimize_single_stage_writes_one_stage() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["optimize", "--set", "schedule.count=1", "--set", "grid.n=200"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let dir = tmp.path().join("out");
    assert!(dir.join("stage_00_trajectory.csv").exists());
    assert!(dir.join("stage_00_control.csv").exists());
    assert!(!dir.join("stage_01_trajectory.csv").exists());
    assert_eq!(read(&dir, "continuation.csv").lines().count(), 2);
    let u = parse_control_csv(&read(&dir, "candidate_control.csv"), "candidate_control.csv").unwrap();
    assert_eq!(u.grid.len(), 201);
}

#[test]
fn optimize_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let args = |d: &str| {
        vec![
            "optimize".to_string(),
            "--set".into(),
            "schedule.count=2".into(),
            "--set".into(),
            "grid.n=200".into(),
            "--set".into(),
            "optimizer.reference=previous".into(),
            "--set".into(),
            format!("output.dir={d}"),
        ]
    };
    for d in ["a", "b"] {
        let a: Vec<String> = args(d);
        let refs: Vec<&str> = a.iter().map(String::as_str).collect();
        let out = sweepopt(tmp.path(), &refs);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let mut names: Vec<PathBuf> = fs::read_dir(tmp.path().join("a"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    assert!(names.len() >= 8);
    for p in names {
        let name = p.file_name().unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(tmp.path().join("b").join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn infeasible_terminal_set_stalls() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(
        tmp.path(),
        &["optimize", "--set", "param.c1_offset=5", "--set", "schedule.count=2", "--set", "grid.n=200"],
    );
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("stalled"));
}

#[test]
fn optimized_candidate_certifies() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["optimize"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = sweepopt(
        tmp.path(),
        &[
            "certify",
            "--trajectory",
            "out/candidate_trajectory.csv",
            "--multipliers",
            "out/candidate_multipliers.json",
            "--set",
            "certify.tol=0.05",
        ],
    );
    assert_eq!(code(&out), 0, "{}{}", String::from_utf8_lossy(&out.stdout), stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&read(tmp.path(), "out/certificate.json")).unwrap();
    assert_eq!(report["overall_pass"], true);
    assert_eq!(report["checks"]["adjoint"]["tolerance"], 0.05);
}

#[test]
fn analytic_certificate_passes_and_pi_control_fails() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["certify", "--analytic", "--emit-candidate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&read(tmp.path(), "out/certificate.json")).unwrap();
    assert_eq!(report["overall_pass"], true);
    assert_eq!(report["nu_atoms"].as_array().unwrap().len(), 1);

    // Same states and multipliers, control pinned at the upper bound.
    let csv = read(tmp.path(), "out/candidate_trajectory.csv");
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    let j = header.split(',').position(|h| h == "u1").unwrap();
    let mut edited = format!("{header}\n");
    for l in lines {
        let mut f: Vec<String> = l.split(',').map(String::from).collect();
        f[j] = format!("{:.17e}", std::f64::consts::PI);
        edited.push_str(&f.join(","));
        edited.push('\n');
    }
    fs::write(tmp.path().join("pi.csv"), edited).unwrap();
    let out = sweepopt(
        tmp.path(),
        &["certify", "--trajectory", "pi.csv", "--multipliers", "out/candidate_multipliers.json"],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&read(tmp.path(), "out/certificate.json")).unwrap();
    assert_eq!(report["overall_pass"], false);
    assert_eq!(report["checks"]["weak_max"]["pass"], false);
    assert!(report["checks"]["weak_max"]["residual"].as_f64().unwrap() >= 1.0);
}

#[test]
fn sweep_table_converges() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["sweep"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = read(tmp.path(), "out/sweep.csv");
    assert_eq!(
        csv.lines().next().unwrap(),
        "gamma,sup_err_x,xi_weak_err_1,xi_weak_err_t,xi_weak_err_t2,max_psi,max_xi"
    );
    let err = column(&csv, "sup_err_x");
    assert_eq!(err.len(), 8);
    assert!(err.windows(2).all(|w| w[1] <= w[0]), "{err:?}");
    assert!(*err.last().unwrap() <= 0.02);
    for c in ["xi_weak_err_1", "xi_weak_err_t", "xi_weak_err_t2"] {
        assert!(*column(&csv, c).last().unwrap() <= 0.01, "{c}");
    }
    assert!(column(&csv, "max_psi").iter().all(|&v| v <= 1e-8));
}

#[test]
fn oracle_compare_reports_first_order_refinement() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(tmp.path(), &["oracle-compare", "--gamma", "1e4"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = read(tmp.path(), "out/oracle.csv");
    let n = column(&csv, "n");
    assert_eq!(n, vec![500.0, 1000.0, 2000.0, 4000.0]);
    let e = column(&csv, "err_catching_up");
    for w in e.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.6..=2.4).contains(&ratio), "{e:?}");
    }
}

#[test]
fn oracle_compare_matches_in_deep_interior() {
    let tmp = TempDir::new().unwrap();
    let out = sweepopt(
        tmp.path(),
        &["oracle-compare", "--set", "instance=interior_drift", "--set", "oracle.sizes=20,40", "--gamma", "100"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = read(tmp.path(), "out/oracle.csv");
    let cu = column(&csv, "err_catching_up");
    let pen = column(&csv, "err_penalty");
    for (a, b) in cu.iter().zip(&pen) {
        assert!(a.abs() < 1e-12 && b.abs() < 1e-12, "{a} {b}");
    }
}
