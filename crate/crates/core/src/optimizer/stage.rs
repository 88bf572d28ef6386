//! Projected-gradient solver for one penalized problem.

use nalgebra::{DMatrix, DVector};

use crate::controls::{project_with_trust, GridControl};
use crate::dynamics::{IntegratorOptions, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::LevelSetC;
use crate::instance::{ControlSet, EndpointSet, ProblemInstance};
use crate::linalg::{dot, norm, solve_tridiagonal};

use super::{evaluate, gradient, Evaluation, StageData, StageRefs, TerminalTarget};

/// Iteration limits and tolerances of a stage solve.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBudget {
    /// Total projected-gradient iterations across penalty escalations.
    pub max_iters: usize,
    /// Stop when the projected step is below this in the sup norm.
    pub stage_tol: f64,
    pub mu0: f64,
    pub mu_growth: f64,
    pub max_escalations: usize,
    /// Accepted distance of `x(t_b)` from the terminal set.
    pub endpoint_tol: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// Add the Gauss-Newton term of the endpoint penalty to the metric.
    pub gauss_newton: bool,
}

impl Default for StageBudget {
    fn default() -> Self {
        StageBudget {
            max_iters: 1000,
            stage_tol: 1e-7,
            mu0: 10.0,
            mu_growth: 10.0,
            max_escalations: 6,
            endpoint_tol: 1e-4,
            armijo: 1e-4,
            max_backtracks: 40,
            gauss_newton: true,
        }
    }
}

impl StageBudget {
    /// `endpoint_tol = 1e-4 * diam C` from the bounding box of the level-set
    /// function.
    pub fn for_geometry(geometry: &LevelSetC) -> Self {
        let (lo, hi) = geometry.function().bounds();
        let diam = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt();
        StageBudget {
            endpoint_tol: 1e-4 * diam,
            ..Self::default()
        }
    }
}

/// How the initial state is constrained in a stage.
#[derive(Debug, Clone)]
pub enum InitialState {
    Fixed(Vec<f64>),
    /// Projected onto `set`, then pushed `rho` inward when it lands on the
    /// boundary band of `C`.
    Free { set: EndpointSet, rho: f64 },
}

/// Iterate and diagnostics at the end of a stage.
#[derive(Debug, Clone)]
pub struct PenalizedSolveState {
    pub gamma: f64,
    pub control: GridControl,
    pub x0: Vec<f64>,
    pub trajectory: Trajectory,
    pub z_terminal: f64,
    /// The penalized cost `J` (constraint penalties excluded).
    pub cost: f64,
    /// Objective including the constraint penalties.
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub mu: f64,
    pub terminal_distance: f64,
    /// Objective after every accepted iterate, per penalty level.
    pub history: Vec<f64>,
}

fn project_initial(rule: &InitialState, geometry: &LevelSetC, x: &[f64]) -> Vec<f64> {
    match rule {
        InitialState::Fixed(p) => p.clone(),
        InitialState::Free { set, rho } => {
            let p = set.project(x);
            if geometry.eval_psi(&p) < -geometry.bdry_tol {
                return p;
            }
            let g = geometry.grad_psi_vec(&p);
            let len = norm(&g);
            if len == 0.0 {
                return p;
            }
            p.iter().zip(&g).map(|(a, d)| a - rho * d / len).collect()
        }
    }
}

/// Per-node bounds for interval and box sets, intersected with the trust
/// region.
fn node_bounds(
    sets: &[ControlSet],
    refs: &StageRefs,
    m: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut lo = Vec::with_capacity(sets.len() * m);
    let mut hi = Vec::with_capacity(sets.len() * m);
    for (i, s) in sets.iter().enumerate() {
        let (l, h) = s.bounds()?;
        for c in 0..m {
            let (mut a, mut b) = (l[c], h[c]);
            if let Some(delta) = refs.delta {
                if m > 1 {
                    return None;
                }
                let r = refs.u.node(i)[c];
                a = a.max(r - delta);
                b = b.min(r + delta);
            }
            lo.push(a);
            hi.push(b.max(a));
        }
    }
    Some((lo, hi))
}

fn project_controls(
    u: &GridControl,
    sets: &[ControlSet],
    refs: &StageRefs,
) -> Result<GridControl> {
    let mut out = u.clone();
    for i in 0..u.nodes() {
        let trust = refs.delta.map(|d| (refs.u.node(i), d));
        let p = project_with_trust(&sets[i], u.node(i), trust, u.grid[i])?;
        out.node_mut(i).copy_from_slice(&p);
    }
    Ok(out)
}

/// Sobolev metric `M + K + e_0 e_0^T` (lumped mass, the Hessian of `z/2`,
/// and the `u(0)` term), optionally with a Gauss-Newton low-rank term, with
/// fixed coordinates decoupled.
struct Metric<'a> {
    grid: &'a [f64],
    m: usize,
    active: &'a [bool],
    z_scale: f64,
}

impl Metric<'_> {
    fn diag_off(&self, c: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.grid.len();
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n - 1];
        for i in 0..n - 1 {
            let h = self.grid[i + 1] - self.grid[i];
            diag[i] += 0.5 * h + self.z_scale / h;
            diag[i + 1] += 0.5 * h + self.z_scale / h;
            let both_free = !self.active[i * self.m + c] && !self.active[(i + 1) * self.m + c];
            off[i] = if both_free { -self.z_scale / h } else { 0.0 };
        }
        diag[0] += 1.0;
        (diag, off)
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; rhs.len()];
        for c in 0..self.m {
            let (diag, off) = self.diag_off(c);
            let mut r: Vec<f64> = (0..n).map(|i| rhs[i * self.m + c]).collect();
            solve_tridiagonal(&diag, &off, &mut r);
            for i in 0..n {
                out[i * self.m + c] = r[i];
            }
        }
        out
    }

    /// Solves `(P + sum_b w g_b g_b^T) d = rhs` by the Woodbury identity.
    fn solve_low_rank(&self, rhs: &[f64], vecs: &[Vec<f64>], weight: f64) -> Vec<f64> {
        let y = self.solve(rhs);
        if vecs.is_empty() || weight <= 0.0 {
            return y;
        }
        let k = vecs.len();
        let masked: Vec<Vec<f64>> = vecs
            .iter()
            .map(|g| {
                g.iter()
                    .zip(self.active)
                    .map(|(v, a)| if *a { 0.0 } else { *v })
                    .collect()
            })
            .collect();
        let zs: Vec<Vec<f64>> = masked.iter().map(|g| self.solve(g)).collect();
        let mut s = DMatrix::<f64>::zeros(k, k);
        let mut b = DVector::<f64>::zeros(k);
        for a in 0..k {
            for c in 0..k {
                s[(a, c)] = dot(&masked[a], &zs[c]);
            }
            s[(a, a)] += 1.0 / weight;
            b[a] = dot(&masked[a], &y);
        }
        match s.lu().solve(&b) {
            Some(coef) => {
                let mut d = y;
                for a in 0..k {
                    for (di, zi) in d.iter_mut().zip(&zs[a]) {
                        *di -= coef[a] * zi;
                    }
                }
                d
            }
            None => y,
        }
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Solves one penalized problem from `init` by projected gradient with an
/// Armijo search along the projection arc. The endpoint constraint is
/// enforced by an escalating quadratic penalty.
#[allow(clippy::too_many_arguments)]
pub fn solve_stage(
    inst: &ProblemInstance,
    gamma: f64,
    refs: &StageRefs,
    initial: &InitialState,
    terminal: &TerminalTarget,
    init: (&[f64], &GridControl),
    budget: &StageBudget,
    integrator: &IntegratorOptions,
) -> Result<PenalizedSolveState> {
    let geometry = &inst.geometry;
    let m = inst.m();
    let grid = init.1.grid.clone();
    let sets: Vec<ControlSet> = grid.iter().map(|&t| inst.control_set(t)).collect();
    let bounds = node_bounds(&sets, refs, m);
    let x0_free = matches!(initial, InitialState::Free { .. });

    let mut u = project_controls(init.1, &sets, refs)?;
    let mut x0 = project_initial(initial, geometry, init.0);
    let mut mu = budget.mu0;
    let mut iterations = 0;
    let mut history = Vec::new();
    let mut grad_norm = f64::INFINITY;

    let make = |mu: f64| StageData {
        inst,
        gamma,
        refs,
        terminal,
        mu,
        integrator,
    };
    let mut eval: Evaluation = evaluate(&make(mu), &x0, &u, None)?;

    for escalation in 0..=budget.max_escalations {
        if escalation > 0 {
            mu *= budget.mu_growth;
            eval = evaluate(&make(mu), &x0, &u, None)?;
        }
        let data = make(mu);
        history.push(eval.cost.total);
        while iterations < budget.max_iters {
            let basis = if budget.gauss_newton {
                terminal.normal_basis(eval.traj.terminal())
            } else {
                Vec::new()
            };
            let grad = gradient(&data, &u, &eval, &basis);
            let active: Vec<bool> = match &bounds {
                Some((lo, hi)) => u
                    .values
                    .iter()
                    .zip(&grad.u)
                    .enumerate()
                    .map(|(k, (v, g))| {
                        let eps = 1e-12 * (1.0 + v.abs());
                        (*v <= lo[k] + eps && *g > 0.0) || (*v >= hi[k] - eps && *g < 0.0)
                    })
                    .collect(),
                None => vec![false; u.values.len()],
            };
            let z_scale = 1.0
                + refs
                    .delta
                    .map(|d| 4.0 * mu * (eval.cost.z - d).max(0.0))
                    .unwrap_or(0.0);
            let metric = Metric {
                grid: &grid,
                m,
                active: &active,
                z_scale,
            };
            let dir = metric.solve_low_rank(&grad.u, &grad.sensitivities, 2.0 * mu);
            let step_u = |s: f64| -> Result<GridControl> {
                let mut trial = u.clone();
                for (t, d) in trial.values.iter_mut().zip(&dir) {
                    *t -= s * d;
                }
                project_controls(&trial, &sets, refs)
            };
            let step_x0 = |s: f64| -> Vec<f64> {
                if !x0_free {
                    return x0.clone();
                }
                let trial: Vec<f64> = x0.iter().zip(&grad.x0).map(|(a, g)| a - s * g).collect();
                project_initial(initial, geometry, &trial)
            };

            let full = step_u(1.0)?;
            let x_full = step_x0(1.0);
            grad_norm = sup_diff(&full.values, &u.values).max(sup_diff(&x_full, &x0));
            if grad_norm <= budget.stage_tol {
                break;
            }

            let mut s = 1.0;
            let mut accepted = None;
            for _ in 0..budget.max_backtracks {
                let trial_u = step_u(s)?;
                let trial_x0 = step_x0(s);
                let predicted: f64 = grad
                    .u
                    .iter()
                    .zip(u.values.iter().zip(&trial_u.values))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum::<f64>()
                    + grad
                        .x0
                        .iter()
                        .zip(x0.iter().zip(&trial_x0))
                        .map(|(g, (a, b))| if x0_free { g * (a - b) } else { 0.0 })
                        .sum::<f64>();
                if let Ok(e) = evaluate(&data, &trial_x0, &trial_u, None) {
                    if e.cost.total <= eval.cost.total - budget.armijo * predicted.max(0.0)
                        && e.cost.total < eval.cost.total
                    {
                        accepted = Some((trial_u, trial_x0, e));
                        break;
                    }
                }
                s *= 0.5;
            }
            iterations += 1;
            match accepted {
                Some((nu, nx, ne)) => {
                    u = nu;
                    x0 = nx;
                    eval = ne;
                    history.push(eval.cost.total);
                }
                None => break,
            }
        }
        let z_ok = refs.delta.map(|d| eval.cost.z < d).unwrap_or(true);
        if eval.cost.terminal_distance <= budget.endpoint_tol && z_ok {
            return Ok(PenalizedSolveState {
                gamma,
                z_terminal: eval.cost.z,
                cost: eval.cost.cost_j(),
                objective: eval.cost.total,
                grad_norm,
                iterations,
                mu,
                terminal_distance: eval.cost.terminal_distance,
                history,
                control: u,
                x0,
                trajectory: eval.traj,
            });
        }
        if iterations >= budget.max_iters {
            break;
        }
    }
    Err(Error::Stalled {
        stage: None,
        reason: format!(
            "endpoint distance {:.3e} above {:.3e} after {} iterations (mu = {:.1e})",
            eval.cost.terminal_distance, budget.endpoint_tol, iterations, mu
        ),
    })
}
