//! Convergence studies against a known optimum and the catching-up oracle.

use crate::controls::{uniform_grid, GridControl};
use crate::dynamics::{
    cell_mean_xi, integrate_catching_up, integrate_penalized, integrate_penalized_taped,
    IntegratorOptions, InvariantSummary, Trajectory,
};
use crate::error::{Error, Result};
use crate::instance::{AnalyticOptimum, ProblemInstance};
use crate::linalg::dist;
use crate::schedule::{alpha_for, PenaltySchedule};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub gamma: f64,
    pub sup_err_x: f64,
    /// Relative errors of `int xi phi` for `phi = 1, t, t^2`.
    pub xi_weak_err: [f64; 3],
    pub max_psi: f64,
    pub max_xi: f64,
    pub max_speed: f64,
}

fn cell_moment(a: f64, b: f64, p: i32) -> f64 {
    (b.powi(p + 1) - a.powi(p + 1)) / (p + 1) as f64
}

/// Relative errors of `int xi t^p dt`, `p = 0, 1, 2`, computed from cell
/// means of `xi`, against the same integrals of `exact`.
pub fn xi_weak_errors(grid: &[f64], xi_cells: &[f64], exact: impl Fn(f64) -> f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (p, slot) in out.iter_mut().enumerate() {
        let mut got = 0.0;
        let mut want = 0.0;
        for i in 0..grid.len() - 1 {
            let (a, b) = (grid[i], grid[i + 1]);
            let w = cell_moment(a, b, p as i32);
            got += xi_cells[i] * w;
            // Simpson on the exact multiplier.
            let mid = 0.5 * (a + b);
            let fa = exact(a) * a.powi(p as i32);
            let fm = exact(mid) * mid.powi(p as i32);
            let fb = exact(b) * b.powi(p as i32);
            want += (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        }
        *slot = if want.abs() > 0.0 {
            (got - want).abs() / want.abs()
        } else {
            (got - want).abs()
        };
    }
    out
}

/// Integrates the fixed control `u` across the schedule, from the shifted
/// initial point of each stage, and compares with `exact`.
pub fn run_sweep(
    inst: &ProblemInstance,
    schedule: &PenaltySchedule,
    u: &GridControl,
    x0: &[f64],
    exact: &dyn AnalyticOptimum,
    integrator: &IntegratorOptions,
) -> Result<Vec<SweepRow>> {
    (0..schedule.len())
        .map(|k| {
            let gamma = schedule.gammas[k];
            let start = schedule.shift_initial_point(&inst.geometry, x0, k);
            let (traj, tape) = integrate_penalized_taped(inst, &start, u, gamma, integrator, None)?;
            let cells = cell_mean_xi(inst, &traj, &tape, gamma);
            let inv = InvariantSummary::of(inst, &traj);
            Ok(SweepRow {
                gamma,
                sup_err_x: traj.sup_distance(|t| exact.state(t)),
                xi_weak_err: xi_weak_errors(&traj.grid, &cells, |t| exact.xi(t)),
                max_psi: inv.max_psi,
                max_xi: inv.max_xi,
                max_speed: inv.max_speed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRow {
    pub n: usize,
    pub h: f64,
    /// Sup error of the catching-up scheme against the reference.
    pub err_catching_up: f64,
    /// Sup error of the penalized flow on the same grid against the
    /// reference.
    pub err_penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    /// Sup distance between the penalized and catching-up trajectories on the
    /// finest grid.
    pub sup_distance: f64,
    /// Least-squares slope of `log err_catching_up` against `log h`.
    pub slope: f64,
}

/// Least-squares slope of `y` against `x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn sup_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| dist(x, y))
        .fold(0.0, f64::max)
}

/// Cross-validates the penalized flow at `gamma` against the catching-up
/// scheme on each grid size. The penalized run starts `alpha / eta` inside
/// `C` when `x0` lies on the boundary. Errors are measured against `exact`
/// when given, otherwise against the penalized flow on the finest grid.
pub fn oracle_compare(
    inst: &ProblemInstance,
    gamma: f64,
    sizes: &[usize],
    control: impl Fn(f64) -> Vec<f64>,
    x0: &[f64],
    exact: Option<&dyn AnalyticOptimum>,
    integrator: &IntegratorOptions,
) -> Result<OracleReport> {
    if sizes.len() < 2 {
        return Err(Error::InvalidParameter("oracle comparison needs two grid sizes".into()));
    }
    let geometry = &inst.geometry;
    let rho = alpha_for(gamma, inst.m_bar, geometry.eta)? / geometry.eta;
    let start = if geometry.eval_psi(x0) >= -geometry.bdry_tol {
        let g = geometry.grad_psi_vec(x0);
        let len = crate::linalg::norm(&g);
        x0.iter().zip(&g).map(|(a, d)| a - rho * d / len).collect()
    } else {
        x0.to_vec()
    };
    let (ta, tb) = inst.horizon;
    let finest = *sizes.iter().max().unwrap();
    let mut runs = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let grid = uniform_grid(ta, tb, n);
        let u = GridControl::from_fn(&grid, inst.m(), &control);
        let cu = integrate_catching_up(inst, x0, &u)?;
        let pen = integrate_penalized(inst, &start, &u, gamma, integrator)?;
        runs.push((n, cu, pen));
    }
    let reference = runs.iter().find(|r| r.0 == finest).unwrap().2.clone();
    let err = |traj: &Trajectory| match exact {
        Some(opt) => traj.sup_distance(|t| opt.state(t)),
        None => {
            let stride = finest / (traj.len() - 1);
            traj.states
                .iter()
                .enumerate()
                .map(|(i, x)| dist(x, &reference.states[i * stride]))
                .fold(0.0, f64::max)
        }
    };
    let rows: Vec<OracleRow> = runs
        .iter()
        .map(|(n, cu, pen)| OracleRow {
            n: *n,
            h: (tb - ta) / *n as f64,
            err_catching_up: err(cu),
            err_penalty: err(pen),
        })
        .collect();
    let (_, cu, pen) = runs.iter().find(|r| r.0 == finest).unwrap();
    let usable: Vec<&OracleRow> = rows.iter().filter(|r| r.err_catching_up > 0.0).collect();
    let slope = if usable.len() >= 2 {
        loglog_slope(
            &usable.iter().map(|r| r.h).collect::<Vec<_>>(),
            &usable.iter().map(|r| r.err_catching_up).collect::<Vec<_>>(),
        )
    } else {
        f64::NAN
    };
    Ok(OracleReport {
        sup_distance: sup_gap(pen, cu),
        rows,
        slope,
    })
}
