//! End-to-end acceptance run on the annulus instance. Prints one
//! `PASS`/`FAIL` line per criterion and exits non-zero if any fails.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use sweepopt::certificate::{analytic_candidate, certify, Tolerances};
use sweepopt::controls::{uniform_grid, GridControl};
use sweepopt::dynamics::{integrate_penalized, integrate_penalized_taped, IntegratorOptions, InvariantSummary};
use sweepopt::experiments::oracle_compare;
use sweepopt::instance::{builtin, closed_form_solution, Params, ProblemInstance};
use sweepopt::io::{parse_control_csv, parse_trajectory_csv};
use sweepopt::optimizer::{
    adjoint_integrate_penalized, evaluate, gradient, StageData, StageRefs, TerminalTarget,
};
use sweepopt::schedule::make_schedule;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn annulus() -> ProblemInstance {
    builtin("annulus_example", &Params::new()).unwrap()
}

fn run(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sweepopt"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(0) => Ok(()),
        c => Err(format!(
            "`sweepopt {}` exited {c:?}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        )),
    }
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn column(csv: &str, name: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let Some(j) = header.iter().position(|h| *h == name) else {
        return Vec::new();
    };
    lines
        .filter_map(|l| l.split(',').nth(j).and_then(|v| v.parse().ok()))
        .collect()
}

fn require(ok: bool, summary: String) -> Outcome {
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn reproduction(dir: &Path) -> Outcome {
    let started = Instant::now();
    run(dir, &["optimize", "--set", "grid.n=2000", "--set", "schedule.growth=3", "--set", "schedule.count=8"])?;
    let secs = started.elapsed().as_secs_f64();
    let out = dir.join("out");
    let u = parse_control_csv(&read(&out.join("candidate_control.csv"))?, "candidate_control.csv")
        .map_err(|e| e.to_string())?;
    let traj = parse_trajectory_csv(&read(&out.join("candidate_trajectory.csv"))?, "candidate_trajectory.csv")
        .map_err(|e| e.to_string())?;
    let du = (0..u.grid.len())
        .map(|i| (u.node(i)[0] - u.grid[i]).abs())
        .fold(0.0, f64::max);
    let dx = traj
        .grid
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| (x[0] - t.cos()).hypot(x[1] - t.sin()))
        .fold(0.0, f64::max);
    let inst = annulus();
    let g = inst.cost.value(&traj.states[0], traj.states.last().unwrap());
    // Informational: the same run with each stage anchored to the previous one.
    run(dir, &["optimize", "--set", "optimizer.reference=previous", "--set", "output.dir=previous"])?;
    let free = parse_control_csv(&read(&dir.join("previous/candidate_control.csv"))?, "candidate_control.csv")
        .map_err(|e| e.to_string())?;
    let free_du = (0..free.grid.len())
        .map(|i| (free.node(i)[0] - free.grid[i]).abs())
        .fold(0.0, f64::max);
    require(
        du <= 0.02 && dx <= 0.02 && g.abs() <= 1e-3 && secs <= 120.0,
        format!(
            "sup|u - t| = {du:.3e}, sup|x - (cos, sin)| = {dx:.3e}, |g| = {:.3e}, {secs:.1} s \
             (previous-stage anchoring, not graded: sup|u - t| = {free_du:.3e})",
            g.abs()
        ),
    )
}

fn multiplier_convergence(dir: &Path) -> Outcome {
    run(dir, &["sweep", "--set", "output.dir=sweep"])?;
    let csv = read(&dir.join("sweep/sweep.csv"))?;
    let err = column(&csv, "sup_err_x");
    let weak: Vec<f64> = ["xi_weak_err_1", "xi_weak_err_t", "xi_weak_err_t2"]
        .iter()
        .map(|c| column(&csv, c).last().copied().unwrap_or(f64::INFINITY))
        .collect();
    let monotone = err.len() == 8 && err.windows(2).all(|w| w[1] <= w[0]);
    let worst = weak.iter().copied().fold(0.0, f64::max);
    require(
        monotone && worst <= 0.01,
        format!(
            "sup_err_x {:.3e} -> {:.3e} (non-increasing: {monotone}), final xi weak errors {:.2e}/{:.2e}/{:.2e}",
            err.first().unwrap_or(&f64::NAN),
            err.last().unwrap_or(&f64::NAN),
            weak[0],
            weak[1],
            weak[2]
        ),
    )
}

fn bounds_as_invariants() -> Outcome {
    let inst = annulus();
    let eta = inst.geometry.eta;
    let schedule = make_schedule(inst.m_bar, eta, 4.0 * inst.m_bar / eta, 3.0, 8).map_err(|e| e.to_string())?;
    let identity = schedule.identity_residual();
    let grid = uniform_grid(0.0, FRAC_PI_2, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut controls = vec![
        GridControl::from_fn(&grid, 1, |t| vec![t]),
        GridControl::from_fn(&grid, 1, |t| vec![0.5 * (t + PI)]),
        GridControl::constant(&grid, &[PI]),
    ];
    for _ in 0..3 {
        let w: Vec<f64> = grid.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        controls.push(GridControl::new(
            grid.clone(),
            1,
            grid.iter().zip(&w).map(|(t, s)| t + s * (PI - t)).collect(),
        ));
    }
    let mut runs = 0;
    let (mut psi, mut xi_excess, mut speed_excess) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut negative_xi = false;
    for k in 0..schedule.len() {
        let x0 = schedule.shift_initial_point(&inst.geometry, &[1.0, 0.0], k);
        for u in &controls {
            let traj = integrate_penalized(&inst, &x0, u, schedule.gammas[k], &IntegratorOptions::default())
                .map_err(|e| format!("stage {k}: {e}"))?;
            let inv = InvariantSummary::of(&inst, &traj);
            psi = psi.max(inv.max_psi);
            xi_excess = xi_excess.max(inv.max_xi - inv.xi_bound);
            speed_excess = speed_excess.max(inv.max_speed - inv.speed_bound);
            negative_xi |= inv.min_xi < 0.0;
            runs += 1;
        }
    }
    require(
        psi <= 1e-8 && !negative_xi && xi_excess <= 1e-8 && speed_excess <= 1e-6 && identity <= 1e-12,
        format!(
            "{runs} runs: max psi {psi:.3e}, max xi - bound {xi_excess:.3e}, max speed - bound {speed_excess:.3e}, schedule identity {identity:.1e}"
        ),
    )
}

fn analytic_certificate(dir: &Path) -> Outcome {
    run(dir, &["certify", "--analytic", "--set", "output.dir=analytic", "--set", "grid.n=2000"])?;
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.join("analytic/certificate.json"))?).map_err(|e| e.to_string())?;
    let checks = report["checks"].as_object().ok_or("no checks")?;
    let worst = checks
        .values()
        .map(|c| c["residual"].as_f64().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let all_pass = checks.values().all(|c| c["pass"] == true) && report["overall_pass"] == true;

    let inst = annulus();
    let opt = closed_form_solution("annulus_example").map_err(|e| e.to_string())?;
    let cand = analytic_candidate(&inst, opt.as_ref(), 2000);
    let last = cand.grid.len() - 1;
    let jump = cand.p.jump_at(last).map(<[f64]>::to_vec).unwrap_or_default();
    let mass = cand.nu.as_ref().and_then(|nu| nu.atom_at(last)).unwrap_or(0.0);
    let normal = inst.geometry.grad_psi_vec(&cand.states[last]);
    let jump_ok = jump.len() == 2
        && jump[0].abs() <= 1e-12
        && (jump[1] + 0.375).abs() <= 1e-12
        && (0..2).all(|j| (jump[j] - mass * normal[j]).abs() <= 1e-12);
    let lambda = cand.lambda.unwrap_or(0.0);
    let pt = cand.p.terminal();
    let total = pt[0].hypot(pt[1]) + lambda;
    require(
        all_pass && worst <= 1e-4 && jump_ok && total == 1.0,
        format!(
            "{} checks pass, worst residual {worst:.2e}, jump ({:.6}, {:.6}) = {mass:.6} * grad psi, |p(t_b)| + lambda = {total}",
            checks.len(),
            jump.first().unwrap_or(&f64::NAN),
            jump.get(1).unwrap_or(&f64::NAN)
        ),
    )
}

fn certificate_discriminates() -> Outcome {
    let inst = annulus();
    let opt = closed_form_solution("annulus_example").map_err(|e| e.to_string())?;
    let base = analytic_candidate(&inst, opt.as_ref(), 2000);
    let mut pi = base.clone();
    pi.control = GridControl::constant(&base.grid, &[PI]);
    let mut still = base.clone();
    still.xi.iter_mut().for_each(|v| *v = 0.0);
    still.xi_cells = None;
    let tol = Tolerances::analytic();
    let a = certify(&inst, &pi, &tol);
    let b = certify(&inst, &still, &tol);
    let wm = a.check("weak_max");
    let ad = b.check("admissibility");
    require(
        !wm.pass && wm.residual >= 1.0 && !a.overall_pass && !ad.pass && ad.residual >= 0.9 && !b.overall_pass,
        format!(
            "u = pi: weak_max residual {:.3}; xi = 0: admissibility residual {:.3}",
            wm.residual, ad.residual
        ),
    )
}

fn gradient_correctness() -> Outcome {
    let inst = annulus();
    let grid = uniform_grid(0.0, FRAC_PI_2, 100);
    let opt = closed_form_solution("annulus_example").map_err(|e| e.to_string())?;
    let refs = StageRefs {
        x0: opt.state(0.0),
        u: GridControl::from_fn(&grid, 1, |t| opt.control(t)),
        states: Some(grid.iter().map(|&t| opt.state(t)).collect()),
        delta: Some(0.05),
    };
    let terminal = TerminalTarget::unshifted(&inst.c1, 2);
    let integrator = IntegratorOptions::default();
    let data = StageData {
        inst: &inst,
        gamma: 10.0,
        refs: &refs,
        terminal: &terminal,
        mu: 10.0,
        integrator: &integrator,
    };
    let u = GridControl::from_fn(&grid, 1, |t| vec![t + 0.3 + 0.1 * (3.0 * t).sin()]);
    let x0 = vec![1.02, 0.01];
    let eval = evaluate(&data, &x0, &u, None).map_err(|e| e.to_string())?;
    let grad = gradient(&data, &u, &eval, &[]);
    let frozen = eval.tape.substeps.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let du: Vec<f64> = (0..u.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dx: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = |s: f64| {
            let mut v = u.clone();
            for (a, d) in v.values.iter_mut().zip(&du) {
                *a += s * d;
            }
            let x: Vec<f64> = x0.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
            evaluate(&data, &x, &v, Some(&frozen)).map(|e| e.cost.total)
        };
        let fd = (at(step).map_err(|e| e.to_string())? - at(-step).map_err(|e| e.to_string())?) / (2.0 * step);
        let exact: f64 = grad.u.iter().zip(&du).map(|(g, d)| g * d).sum::<f64>()
            + grad.x0.iter().zip(&dx).map(|(g, d)| g * d).sum::<f64>();
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3));
    }

    let eta = inst.geometry.eta;
    let schedule = make_schedule(inst.m_bar, eta, 4.0 * inst.m_bar / eta, 3.0, 8).map_err(|e| e.to_string())?;
    let gamma = *schedule.gammas.last().unwrap();
    let fine = uniform_grid(0.0, FRAC_PI_2, 2000);
    let ubar = GridControl::from_fn(&fine, 1, |t| vec![t]);
    let start = schedule.shift_initial_point(&inst.geometry, &[1.0, 0.0], schedule.len() - 1);
    let (traj, tape) =
        integrate_penalized_taped(&inst, &start, &ubar, gamma, &integrator, None).map_err(|e| e.to_string())?;
    let p = adjoint_integrate_penalized(&inst, &traj, &tape, &ubar, gamma, &[0.5, -0.375])
        .map_err(|e| e.to_string())?;
    let adjoint_gap = fine
        .iter()
        .zip(&p)
        .filter(|(t, _)| **t >= 0.1 && **t <= FRAC_PI_2 - 0.1)
        .map(|(t, v)| (v[0] - 0.5 * t.sin()).hypot(v[1] + 0.5 * t.cos()))
        .fold(0.0, f64::max);
    require(
        worst <= 1e-6 && adjoint_gap <= 0.05,
        format!(
            "20 directions, worst relative gap {worst:.2e}; adjoint vs (sin, -cos)/2 on [0.1, pi/2 - 0.1]: {adjoint_gap:.3e}"
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let inst = annulus();
    let opt = closed_form_solution("annulus_example").map_err(|e| e.to_string())?;
    let report = oracle_compare(
        &inst,
        1e4,
        &[500, 1000, 2000, 4000],
        |t| vec![t],
        &[1.0, 0.0],
        Some(opt.as_ref()),
        &IntegratorOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    require(
        report.sup_distance <= 0.05 && (report.slope - 1.0).abs() <= 0.3,
        format!(
            "sup distance at N = 4000: {:.3e}, log-log slope {:.3}",
            report.sup_distance, report.slope
        ),
    )
}

fn main() -> ExitCode {
    let tmp = TempDir::new().expect("temp dir");
    let dir = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("1 end-to-end reproduction", Box::new(|| reproduction(dir))),
        ("2 multiplier convergence", Box::new(|| multiplier_convergence(dir))),
        ("3 bounds hold on every integration", Box::new(bounds_as_invariants)),
        ("4 analytic certificate", Box::new(|| analytic_certificate(dir))),
        ("5 certificate discriminates", Box::new(certificate_discriminates)),
        ("6 gradient correctness", Box::new(gradient_correctness)),
        ("7 oracle equivalence", Box::new(oracle_equivalence)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(s) => println!("PASS criterion {name}: {s}"),
            Err(s) => {
                failed += 1;
                println!("FAIL criterion {name}: {s}");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
