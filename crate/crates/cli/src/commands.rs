use std::path::Path;
use std::sync::Arc;

use serde_json::json;
use sweepopt::certificate::{analytic_candidate, certify as run_certify, CertificateReport, Tolerances, CHECK_NAMES};
use sweepopt::controls::{uniform_grid, GridControl};
use sweepopt::dynamics::{integrate_penalized, IntegratorOptions, InvariantSummary};
use sweepopt::experiments::{oracle_compare as run_oracle, run_sweep};
use sweepopt::instance::{builtin, closed_form_solution, AnalyticOptimum, EndpointSet, ProblemInstance};
use sweepopt::io;
use sweepopt::optimizer::{continuation_solve, ContinuationOptions, ReferenceMode};
use sweepopt::schedule::{alpha_for, make_schedule, PenaltySchedule};
use sweepopt::Error;

use crate::config::RunConfig;
use crate::{CertifyArgs, CliError};

fn instance(cfg: &RunConfig) -> Result<ProblemInstance, CliError> {
    Ok(builtin(&cfg.instance, &cfg.params)?)
}

fn closed_form(cfg: &RunConfig) -> Option<Arc<dyn AnalyticOptimum>> {
    closed_form_solution(&cfg.instance).ok()
}

fn grid(inst: &ProblemInstance, cfg: &RunConfig) -> Vec<f64> {
    uniform_grid(inst.horizon.0, inst.horizon.1, cfg.grid_n)
}

fn schedule(inst: &ProblemInstance, cfg: &RunConfig) -> Result<PenaltySchedule, CliError> {
    let eta = inst.geometry.eta;
    let gamma0 = cfg.gamma0.unwrap_or(4.0 * inst.m_bar / eta);
    Ok(make_schedule(inst.m_bar, eta, gamma0, cfg.growth, cfg.count)?)
}

fn base_point(inst: &ProblemInstance) -> Vec<f64> {
    match &inst.c0 {
        EndpointSet::Singleton(p) => p.clone(),
        _ => inst.x0_guess.clone(),
    }
}

/// `x0` pushed `alpha / eta` into `C` when it lies on the boundary band.
fn penalized_start(inst: &ProblemInstance, x0: &[f64], gamma: f64) -> Result<Vec<f64>, CliError> {
    let g = &inst.geometry;
    let rho = alpha_for(gamma, inst.m_bar, g.eta)? / g.eta;
    if g.eval_psi(x0) < -g.bdry_tol {
        return Ok(x0.to_vec());
    }
    let n = g.grad_psi_vec(x0);
    let len = n.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(x0.iter().zip(&n).map(|(a, d)| a - rho * d / len).collect())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    io::write_atomic(&dir.join(name), contents)?;
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = instance(cfg)?;
    let gamma = cfg.simulate_gamma;
    let start = penalized_start(&inst, &base_point(&inst), gamma)?;
    let u = match cfg.simulate_control.as_deref() {
        None | Some("reference") if closed_form(cfg).is_some() => {
            let opt = closed_form(cfg).unwrap();
            GridControl::from_fn(&grid(&inst, cfg), inst.m(), |t| opt.control(t))
        }
        Some("reference") => return Err(Error::NoClosedForm(cfg.instance.clone()).into()),
        None | Some("guess") => GridControl::from_fn(&grid(&inst, cfg), inst.m(), |t| (inst.control_guess)(t)),
        Some(path) => {
            let p = Path::new(path);
            let u = io::parse_control_csv(&io::read_text(p)?, path)?;
            if u.m != inst.m() {
                return Err(Error::Parse {
                    source_name: path.into(),
                    line: 1,
                    message: format!("expected {} control columns, found {}", inst.m(), u.m),
                }
                .into());
            }
            u
        }
    };
    let traj = integrate_penalized(&inst, &start, &u, gamma, &IntegratorOptions::default())?;
    let inv = InvariantSummary::of(&inst, &traj);
    let summary = json!({
        "gamma": gamma,
        "max_psi": inv.max_psi,
        "min_xi": inv.min_xi,
        "max_xi": inv.max_xi,
        "xi_bound": inv.xi_bound,
        "max_speed": inv.max_speed,
        "speed_bound": inv.speed_bound,
        "substeps": traj.total_substeps(),
        "terminal": traj.terminal(),
    });
    write(&cfg.output_dir, "trajectory.csv", &io::trajectory_csv(&traj))?;
    write(&cfg.output_dir, "invariants.json", &serde_json::to_string_pretty(&summary).unwrap())?;
    println!(
        "gamma {gamma:.6e}: max psi {:.3e}, max xi {:.6e} (bound {:.6e}), max speed {:.6e} (bound {:.6e})",
        inv.max_psi, inv.max_xi, inv.xi_bound, inv.max_speed, inv.speed_bound
    );
    println!("x(t_b) = {:?}", traj.terminal());
    Ok(())
}

pub fn optimize(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = instance(cfg)?;
    let schedule = schedule(&inst, cfg)?;
    let grid = grid(&inst, cfg);
    let opt = closed_form(cfg);
    let mode = match (cfg.reference.as_deref(), opt) {
        (Some("previous"), _) | (None, None) => ReferenceMode::PreviousStage,
        (_, Some(o)) => ReferenceMode::Analytic(o),
        (Some(_), None) => return Err(Error::NoClosedForm(cfg.instance.clone()).into()),
    };
    let mut opts = ContinuationOptions::new(&inst, mode);
    let b = &mut opts.budget;
    if let Some(v) = cfg.max_iters {
        b.max_iters = v;
    }
    if let Some(v) = cfg.stage_tol {
        b.stage_tol = v;
    }
    if let Some(v) = cfg.mu0 {
        b.mu0 = v;
    }
    if let Some(v) = cfg.mu_growth {
        b.mu_growth = v;
    }
    if let Some(v) = cfg.max_escalations {
        b.max_escalations = v;
    }
    if let Some(v) = cfg.endpoint_tol {
        b.endpoint_tol = v;
    }
    let result = continuation_solve(&inst, &schedule, &grid, &opts)?;
    let dir = &cfg.output_dir;
    for (k, st) in result.stages.iter().enumerate() {
        write(dir, &format!("stage_{k:02}_trajectory.csv"), &io::trajectory_csv(&st.trajectory))?;
        write(dir, &format!("stage_{k:02}_control.csv"), &io::control_csv(&st.control))?;
    }
    write(dir, "continuation.csv", &io::continuation_csv(&result.table))?;
    let cand = &result.candidate;
    write(dir, "candidate_trajectory.csv", &io::candidate_csv(cand))?;
    write(dir, "candidate_control.csv", &io::control_csv(&cand.control))?;
    write(dir, "candidate_multipliers.json", &io::MultiplierFile::of(cand).to_json())?;
    for r in &result.table {
        println!(
            "k={} gamma={:.6e} cost={:.6e} du_sup={:.3e} dx_sup={:.3e} grad_norm={:.3e}",
            r.k, r.gamma, r.cost, r.du_sup, r.dx_sup, r.grad_norm
        );
    }
    let last = result.last();
    let g = inst.cost.value(last.trajectory.initial(), last.trajectory.terminal());
    println!("g(x(t_a), x(t_b)) = {g:.6e}, terminal distance {:.3e}", last.terminal_distance);
    if let Some(opt) = closed_form(cfg) {
        let du = (0..grid.len())
            .map(|i| {
                let r = opt.control(grid[i]);
                last.control
                    .node(i)
                    .iter()
                    .zip(&r)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let dx = last.trajectory.sup_distance(|t| opt.state(t));
        println!("sup |u - u_ref| = {du:.6e}, sup |x - x_ref| = {dx:.6e}");
    }
    Ok(())
}

fn print_report(report: &CertificateReport) {
    for name in CHECK_NAMES {
        let c = report.check(name);
        println!(
            "{:<15} {} residual {:.3e} (tolerance {:.3e})",
            name,
            if c.pass { "pass" } else { "FAIL" },
            c.residual,
            c.tolerance
        );
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!("lambda {:.6e}, |p(t_b)| {:.6e}", report.lambda, {
        report.p_terminal.iter().map(|v| v * v).sum::<f64>().sqrt()
    });
    println!("overall: {}", if report.overall_pass { "pass" } else { "FAIL" });
}

pub fn certify(cfg: &RunConfig, args: &CertifyArgs) -> Result<(), CliError> {
    let inst = instance(cfg)?;
    let (cand, tol) = if args.analytic {
        let opt = closed_form_solution(&cfg.instance)?;
        let cand = analytic_candidate(&inst, opt.as_ref(), cfg.grid_n);
        if args.emit_candidate {
            write(&cfg.output_dir, "candidate_trajectory.csv", &io::candidate_csv(&cand))?;
            write(&cfg.output_dir, "candidate_multipliers.json", &io::MultiplierFile::of(&cand).to_json())?;
        }
        let tol = match cfg.certify_tol {
            Some(t) => Tolerances::uniform(t, Tolerances::analytic().endpoint),
            None => Tolerances::analytic(),
        };
        (cand, tol)
    } else {
        let (Some(tp), Some(mp)) = (&args.trajectory, &args.multipliers) else {
            return Err(CliError::Config(
                "certify needs --analytic or both --trajectory and --multipliers".into(),
            ));
        };
        let ts = tp.display().to_string();
        let ms = mp.display().to_string();
        let table = io::parse_trajectory_csv(&io::read_text(tp)?, &ts)?;
        if table.states[0].len() != inst.n() || table.control.m != inst.m() {
            return Err(Error::Parse {
                source_name: ts,
                line: 1,
                message: "dimensions do not match the instance".into(),
            }
            .into());
        }
        let mult = io::MultiplierFile::from_json(&io::read_text(mp)?, &ms)?;
        let cand = mult.candidate(table, &ms)?;
        let tol = match cfg.certify_tol {
            Some(t) => Tolerances::uniform(t, cfg.certify_endpoint_tol),
            None => Tolerances::continuation(cand.p.sup_norm(), cfg.certify_endpoint_tol),
        };
        (cand, tol)
    };
    let report = run_certify(&inst, &cand, &tol);
    write(&cfg.output_dir, "certificate.json", &report.to_json())?;
    print_report(&report);
    if report.overall_pass {
        Ok(())
    } else {
        Err(CliError::CertificateFailed)
    }
}

pub fn sweep(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = instance(cfg)?;
    let opt = closed_form_solution(&cfg.instance)?;
    let schedule = schedule(&inst, cfg)?;
    let grid = grid(&inst, cfg);
    let u = GridControl::from_fn(&grid, inst.m(), |t| opt.control(t));
    let rows = run_sweep(
        &inst,
        &schedule,
        &u,
        &base_point(&inst),
        opt.as_ref(),
        &IntegratorOptions::default(),
    )?;
    write(&cfg.output_dir, "sweep.csv", &io::sweep_csv(&rows))?;
    for r in &rows {
        println!(
            "gamma={:.6e} sup_err_x={:.3e} xi_weak_err=[{:.3e}, {:.3e}, {:.3e}] max_psi={:.3e} max_xi={:.6e}",
            r.gamma, r.sup_err_x, r.xi_weak_err[0], r.xi_weak_err[1], r.xi_weak_err[2], r.max_psi, r.max_xi
        );
    }
    Ok(())
}

pub fn oracle_compare(cfg: &RunConfig) -> Result<(), CliError> {
    let inst = instance(cfg)?;
    let opt = closed_form(cfg);
    let control = |t: f64| match &opt {
        Some(o) => o.control(t),
        None => (inst.control_guess)(t),
    };
    let report = run_oracle(
        &inst,
        cfg.oracle_gamma,
        &cfg.oracle_sizes,
        control,
        &base_point(&inst),
        opt.as_deref(),
        &IntegratorOptions::default(),
    )?;
    write(&cfg.output_dir, "oracle.csv", &io::oracle_csv(&report.rows))?;
    for r in &report.rows {
        println!(
            "n={} h={:.3e} err_catching_up={:.3e} err_penalty={:.3e}",
            r.n, r.h, r.err_catching_up, r.err_penalty
        );
    }
    println!(
        "sup distance penalty vs catching-up: {:.3e}; refinement slope {:.3}",
        report.sup_distance, report.slope
    );
    Ok(())
}
