//! Forward integration of the penalized dynamics and the catching-up
//! projection scheme.

use crate::controls::GridControl;
use crate::error::{Error, Result};
use crate::geometry::{classify_with_band, Region};
use crate::instance::ProblemInstance;
use crate::linalg::{dist, frobenius, norm};

const EXP_LO: f64 = -745.0;
const EXP_HI: f64 = 50.0;

/// `gamma e^{gamma psi}` with the exponent clamped to `[-745, 50]`, and its
/// derivative with respect to `psi` (zero where the clamp is active).
#[inline]
pub fn penalty_factor(gamma: f64, psi: f64) -> (f64, f64) {
    let e = gamma * psi;
    let c = e.clamp(EXP_LO, EXP_HI);
    let xi = gamma * c.exp();
    let d = if e == c { gamma * xi } else { 0.0 };
    (xi, d)
}

/// Scratch buffers for right-hand side and Jacobian evaluations.
#[derive(Debug, Clone)]
pub struct Workspace {
    n: usize,
    pub(crate) grad: Vec<f64>,
    pub(crate) hess: Vec<f64>,
    pub(crate) ext: Vec<f64>,
    pub(crate) ext_hess: Vec<f64>,
    pub(crate) jf: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Workspace {
            n,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
            ext: vec![0.0; n],
            ext_hess: vec![0.0; n * n],
            jf: vec![0.0; n * n],
        }
    }
}

/// `f(t,x,u) - grad Phi(x) - gamma e^{gamma psi(x)} grad psi(x)`. Returns the
/// penalty factor `xi` used.
pub fn penalty_rhs_into(
    inst: &ProblemInstance,
    t: f64,
    x: &[f64],
    u: &[f64],
    gamma: f64,
    out: &mut [f64],
    ws: &mut Workspace,
) -> Result<f64> {
    inst.f_phi(t, x, u, out, &mut ws.ext);
    let psi = inst.geometry.eval_psi(x);
    inst.geometry.grad_psi(x, &mut ws.grad);
    let (xi, _) = penalty_factor(gamma, psi);
    for i in 0..ws.n {
        out[i] -= xi * ws.grad[i];
    }
    if !out.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { t });
    }
    Ok(xi)
}

pub fn penalty_rhs(
    inst: &ProblemInstance,
    t: f64,
    x: &[f64],
    u: &[f64],
    gamma: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; inst.n()];
    let mut ws = Workspace::new(inst.n());
    penalty_rhs_into(inst, t, x, u, gamma, &mut out, &mut ws)?;
    Ok(out)
}

/// Jacobian of the penalized right-hand side with respect to `x`
/// (row-major), and with respect to `u` written into `ju`.
#[allow(clippy::too_many_arguments)]
pub fn penalty_jacobians(
    inst: &ProblemInstance,
    t: f64,
    x: &[f64],
    u: &[f64],
    gamma: f64,
    jx: &mut [f64],
    ju: &mut [f64],
    ws: &mut Workspace,
) {
    let n = ws.n;
    inst.field.jac_x(t, x, u, jx);
    inst.field.jac_u(t, x, u, ju);
    inst.extension.hess(x, &mut ws.ext_hess);
    let psi = inst.geometry.eval_psi(x);
    inst.geometry.grad_psi(x, &mut ws.grad);
    inst.geometry.hess_psi(x, &mut ws.hess);
    let (xi, dxi) = penalty_factor(gamma, psi);
    for i in 0..n {
        for j in 0..n {
            jx[i * n + j] -=
                ws.ext_hess[i * n + j] + xi * ws.hess[i * n + j] + dxi * ws.grad[i] * ws.grad[j];
        }
    }
}

/// Rough magnitude of the penalized Jacobian at `x`.
pub fn stiffness(inst: &ProblemInstance, t: f64, x: &[f64], u: &[f64], gamma: f64, ws: &mut Workspace) -> f64 {
    let n = ws.n;
    inst.field.jac_x(t, x, u, &mut ws.jf);
    inst.extension.hess(x, &mut ws.ext_hess);
    let psi = inst.geometry.eval_psi(x);
    inst.geometry.grad_psi(x, &mut ws.grad);
    inst.geometry.hess_psi(x, &mut ws.hess);
    let (xi, dxi) = penalty_factor(gamma, psi);
    let g2: f64 = ws.grad[..n].iter().map(|v| v * v).sum();
    frobenius(&ws.jf) + frobenius(&ws.ext_hess) + xi * frobenius(&ws.hess) + dxi * g2
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorOptions {
    /// Target bound on `h * stiffness` when predicting the substep count.
    pub stiffness_target: f64,
    /// Hard bound on `h * stiffness` at the end of every substep.
    pub stiffness_limit: f64,
    /// Allowed relative change of the penalty force across one substep.
    pub penalty_change: f64,
    pub max_substeps: u32,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            stiffness_target: 1.0,
            stiffness_limit: 2.0,
            penalty_change: 0.1,
            max_substeps: 1 << 22,
        }
    }
}

/// Grid values of a computed state path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Right derivatives at the nodes; the last entry is the left derivative.
    pub velocities: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
    /// Penalty parameter, if produced by the penalized integrator.
    pub gamma: Option<f64>,
    /// RK4 substeps used in each cell (empty for other schemes).
    pub substeps: Vec<u32>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("empty trajectory")
    }

    pub fn initial(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn max_psi(&self, inst: &ProblemInstance) -> f64 {
        self.states
            .iter()
            .map(|x| inst.geometry.eval_psi(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_xi(&self) -> f64 {
        self.xi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }

    /// `sup_i |x(t_i) - other(t_i)|`.
    pub fn sup_distance(&self, other: impl Fn(f64) -> Vec<f64>) -> f64 {
        self.grid
            .iter()
            .zip(&self.states)
            .map(|(t, x)| dist(x, &other(*t)))
            .fold(0.0, f64::max)
    }

    pub fn total_substeps(&self) -> u64 {
        self.substeps.iter().map(|&m| m as u64).sum()
    }
}

/// Substep start states of a penalized integration, in order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    pub n: usize,
    pub substeps: Vec<u32>,
    /// Index of the first substep of each cell.
    pub offsets: Vec<usize>,
    pub starts: Vec<f64>,
}

impl Tape {
    pub fn start(&self, k: usize) -> &[f64] {
        &self.starts[k * self.n..(k + 1) * self.n]
    }
}

/// State of one RK4 substep: time, start state, control values at the three
/// stage times.
pub(crate) struct SubstepControls {
    pub u0: Vec<f64>,
    pub uh: Vec<f64>,
    pub u1: Vec<f64>,
}

pub(crate) fn control_at(u: &GridControl, i: usize, w: f64, out: &mut [f64]) {
    let (a, b) = (u.node(i), u.node(i + 1));
    for j in 0..u.m {
        out[j] = (1.0 - w) * a[j] + w * b[j];
    }
}

/// Interpolation weights of the three RK4 stage times of substep `j` of `m`.
#[inline]
pub(crate) fn stage_weights(j: u32, m: u32) -> (f64, f64, f64) {
    let m = m as f64;
    let j = j as f64;
    (j / m, (j + 0.5) / m, (j + 1.0) / m)
}

pub(crate) fn fill_controls(u: &GridControl, i: usize, j: u32, m: u32, c: &mut SubstepControls) {
    let (w0, wh, w1) = stage_weights(j, m);
    control_at(u, i, w0, &mut c.u0);
    control_at(u, i, wh, &mut c.uh);
    control_at(u, i, w1, &mut c.u1);
}

struct Rk4Buffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    y: Vec<f64>,
    drive: Vec<f64>,
}

impl Rk4Buffers {
    fn new(n: usize) -> Self {
        Rk4Buffers {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            y: vec![0.0; n],
            drive: vec![0.0; n],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn rk4_step(
    inst: &ProblemInstance,
    tau: f64,
    h: f64,
    x: &mut [f64],
    c: &SubstepControls,
    gamma: f64,
    b: &mut Rk4Buffers,
    ws: &mut Workspace,
) -> Result<f64> {
    let n = x.len();
    let mut force = 0.0_f64;
    let xi = penalty_rhs_into(inst, tau, x, &c.u0, gamma, &mut b.k1, ws)?;
    force = force.max(xi * norm(&ws.grad));
    for i in 0..n {
        b.y[i] = x[i] + 0.5 * h * b.k1[i];
    }
    let xi = penalty_rhs_into(inst, tau + 0.5 * h, &b.y, &c.uh, gamma, &mut b.k2, ws)?;
    force = force.max(xi * norm(&ws.grad));
    for i in 0..n {
        b.y[i] = x[i] + 0.5 * h * b.k2[i];
    }
    let xi = penalty_rhs_into(inst, tau + 0.5 * h, &b.y, &c.uh, gamma, &mut b.k3, ws)?;
    force = force.max(xi * norm(&ws.grad));
    for i in 0..n {
        b.y[i] = x[i] + h * b.k3[i];
    }
    let xi = penalty_rhs_into(inst, tau + h, &b.y, &c.u1, gamma, &mut b.k4, ws)?;
    force = force.max(xi * norm(&ws.grad));
    for i in 0..n {
        x[i] += h / 6.0 * (b.k1[i] + 2.0 * b.k2[i] + 2.0 * b.k3[i] + b.k4[i]);
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { t: tau + h });
    }
    Ok(force)
}

fn penalty_force(inst: &ProblemInstance, x: &[f64], gamma: f64, ws: &mut Workspace) -> f64 {
    let psi = inst.geometry.eval_psi(x);
    inst.geometry.grad_psi(x, &mut ws.grad);
    penalty_factor(gamma, psi).0 * norm(&ws.grad)
}

/// Integrates the penalized system from `x0` on the grid of `u`.
pub fn integrate_penalized(
    inst: &ProblemInstance,
    x0: &[f64],
    u: &GridControl,
    gamma: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    integrate_penalized_taped(inst, x0, u, gamma, opts, None).map(|(traj, _)| traj)
}

/// As [`integrate_penalized`], also returning the substep tape. With
/// `frozen`, each cell uses exactly the given substep counts and step
/// control is skipped; this keeps the discrete map fixed for finite
/// differences.
pub fn integrate_penalized_taped(
    inst: &ProblemInstance,
    x0: &[f64],
    u: &GridControl,
    gamma: f64,
    opts: &IntegratorOptions,
    frozen: Option<&[u32]>,
) -> Result<(Trajectory, Tape)> {
    let n = inst.n();
    let m_ctrl = inst.m();
    let cells = u.nodes() - 1;
    if let Some(f) = frozen {
        if f.len() != cells {
            return Err(Error::GridMismatch);
        }
    }
    let mut ws = Workspace::new(n);
    let mut bufs = Rk4Buffers::new(n);
    let mut ctrl = SubstepControls {
        u0: vec![0.0; m_ctrl],
        uh: vec![0.0; m_ctrl],
        u1: vec![0.0; m_ctrl],
    };
    let tol = inst.geometry.bdry_tol;

    let mut tape = Tape {
        n,
        substeps: Vec::with_capacity(cells),
        offsets: Vec::with_capacity(cells + 1),
        starts: Vec::new(),
    };
    let mut states = Vec::with_capacity(cells + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    let mut last_m = 1u32;
    let mut cell_start = Vec::new();
    let mut outside_run = 0usize;

    for i in 0..cells {
        let (ti, tj) = (u.grid[i], u.grid[i + 1]);
        let big_h = tj - ti;
        tape.offsets.push(tape.starts.len() / n);
        let mut m = match frozen {
            Some(f) => f[i].max(1),
            None => {
                let s = stiffness(inst, ti, &x, u.node(i), gamma, &mut ws);
                let need = (big_h * s / opts.stiffness_target).ceil().max(1.0);
                let pred = if need >= opts.max_substeps as f64 {
                    opts.max_substeps
                } else {
                    (need as u32).next_power_of_two()
                };
                pred.max(last_m / 2).max(1)
            }
        };
        cell_start.clone_from(&x);
        'attempt: loop {
            x.clone_from(&cell_start);
            let mark = tape.starts.len();
            let h = big_h / m as f64;
            let mut run = outside_run;
            #[allow(clippy::mut_range_bound)]
            for j in 0..m {
                let tau = ti + j as f64 * h;
                tape.starts.extend_from_slice(&x);
                fill_controls(u, i, j, m, &mut ctrl);
                let force_before = if frozen.is_none() {
                    penalty_force(inst, &x, gamma, &mut ws)
                } else {
                    0.0
                };
                let drive = if frozen.is_none() {
                    inst.f_phi(tau, &x, &ctrl.u0, &mut bufs.drive, &mut ws.ext);
                    norm(&bufs.drive)
                } else {
                    0.0
                };
                let step = rk4_step(inst, tau, h, &mut x, &ctrl, gamma, &mut bufs, &mut ws);
                let ok = match &step {
                    Err(_) => false,
                    Ok(_) if frozen.is_some() => true,
                    Ok(stage_force) => {
                        let force_after = penalty_force(inst, &x, gamma, &mut ws);
                        let scale = force_before.max(drive).max(1e-12);
                        let s = stiffness(inst, tau + h, &x, &ctrl.u1, gamma, &mut ws);
                        let change = (force_after - force_before)
                            .abs()
                            .max(stage_force - force_before);
                        change <= opts.penalty_change * scale && h * s <= opts.stiffness_limit
                    }
                };
                if !ok {
                    if frozen.is_some() {
                        return Err(step.err().unwrap_or(Error::NonFinite { t: tau }));
                    }
                    tape.starts.truncate(mark);
                    if m >= opts.max_substeps {
                        return Err(match step {
                            Err(e) => e,
                            Ok(_) => Error::BlowUp {
                                t: tau,
                                reason: format!("step control needs more than {m} substeps in one cell"),
                            },
                        });
                    }
                    m *= 2;
                    continue 'attempt;
                }
                let psi = inst.geometry.eval_psi(&x);
                if psi > tol {
                    run += 1;
                    if run >= 2 {
                        return Err(Error::LeftC { t: tau + h, psi });
                    }
                } else {
                    run = 0;
                }
            }
            outside_run = run;
            break;
        }
        tape.substeps.push(m);
        last_m = m;
        states.push(x.clone());
    }
    tape.offsets.push(tape.starts.len() / n);

    let mut velocities = Vec::with_capacity(cells + 1);
    let mut xi = Vec::with_capacity(cells + 1);
    let mut controls = Vec::with_capacity(cells + 1);
    for (i, s) in states.iter().enumerate() {
        let ui = u.node(i);
        let mut v = vec![0.0; n];
        let factor = penalty_rhs_into(inst, u.grid[i], s, ui, gamma, &mut v, &mut ws)?;
        velocities.push(v);
        xi.push(factor);
        controls.push(ui.to_vec());
    }
    let substeps = tape.substeps.clone();
    Ok((
        Trajectory {
            grid: u.grid.clone(),
            states,
            velocities,
            controls,
            xi,
            gamma: Some(gamma),
            substeps,
        },
        tape,
    ))
}

/// Multiplier of the sweeping process recovered from a trajectory: zero in
/// the deep interior, `|v - f_Phi| / |grad psi|` on the boundary band.
pub fn reconstruct_xi(inst: &ProblemInstance, traj: &Trajectory, band: f64) -> Result<Vec<f64>> {
    let n = inst.n();
    let mut g = vec![0.0; n];
    traj.states
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let psi = inst.geometry.eval_psi(x);
            if classify_with_band(psi, band) == Region::DeepInterior {
                return Ok(0.0);
            }
            inst.geometry.grad_psi(x, &mut g);
            let gn = norm(&g);
            if gn <= 1e-14 {
                return Err(Error::ZeroGradientOnBoundary { index: i });
            }
            let f = inst.f_phi_vec(traj.grid[i], x, &traj.controls[i]);
            Ok(dist(&traj.velocities[i], &f) / gn)
        })
        .collect()
}

/// Mean of `xi = gamma e^{gamma psi}` over each cell, by the trapezoid rule
/// on the recorded substeps.
pub fn cell_mean_xi(inst: &ProblemInstance, traj: &Trajectory, tape: &Tape, gamma: f64) -> Vec<f64> {
    let xi_at = |x: &[f64]| penalty_factor(gamma, inst.geometry.eval_psi(x)).0;
    (0..traj.len() - 1)
        .map(|i| {
            let msub = tape.substeps[i] as usize;
            let first = tape.offsets[i];
            let mut sum = 0.0;
            let mut prev = xi_at(tape.start(first));
            for j in 1..=msub {
                let next = if j < msub {
                    xi_at(tape.start(first + j))
                } else {
                    xi_at(&traj.states[i + 1])
                };
                sum += 0.5 * (prev + next);
                prev = next;
            }
            sum / msub as f64
        })
        .collect()
}

/// Catching-up scheme `x_{i+1} = proj_C(x_i + h f_Phi(t_i, x_i, u(t_i)))`.
pub fn integrate_catching_up(inst: &ProblemInstance, x0: &[f64], u: &GridControl) -> Result<Trajectory> {
    let geo = &inst.geometry;
    let cells = u.nodes() - 1;
    let h_max = (1..=cells)
        .map(|i| u.grid[i] - u.grid[i - 1])
        .fold(0.0, f64::max);
    let radius = geo.eta / (2.0 * geo.m_psi);
    if h_max * inst.m_bar >= radius {
        return Err(Error::OutsideProxRadius {
            distance: h_max * inst.m_bar,
            radius,
        });
    }
    let mut states = Vec::with_capacity(cells + 1);
    let mut x = x0.to_vec();
    states.push(x.clone());
    for i in 0..cells {
        let h = u.grid[i + 1] - u.grid[i];
        let f = inst.f_phi_vec(u.grid[i], &x, u.node(i));
        let trial: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + h * b).collect();
        x = geo.project_onto_c(&trial)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: u.grid[i + 1] });
        }
        states.push(x.clone());
    }
    let mut velocities: Vec<Vec<f64>> = (0..cells)
        .map(|i| {
            let h = u.grid[i + 1] - u.grid[i];
            states[i + 1]
                .iter()
                .zip(&states[i])
                .map(|(a, b)| (a - b) / h)
                .collect()
        })
        .collect();
    velocities.push(velocities.last().cloned().unwrap_or_else(|| vec![0.0; inst.n()]));
    let controls = (0..u.nodes()).map(|i| u.node(i).to_vec()).collect();
    let mut traj = Trajectory {
        grid: u.grid.clone(),
        states,
        velocities,
        controls,
        xi: Vec::new(),
        gamma: None,
        substeps: Vec::new(),
    };
    // Projected points sit on the boundary up to round-off.
    traj.xi = reconstruct_xi(inst, &traj, geo.bdry_tol.max(1e-10))?;
    Ok(traj)
}

/// Largest values of the quantities bounded along penalized solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantSummary {
    pub max_psi: f64,
    pub min_xi: f64,
    pub max_xi: f64,
    pub max_speed: f64,
    pub xi_bound: f64,
    pub speed_bound: f64,
}

impl InvariantSummary {
    pub fn of(inst: &ProblemInstance, traj: &Trajectory) -> Self {
        let geo = &inst.geometry;
        let xi_bound = 2.0 * inst.m_bar / geo.eta;
        InvariantSummary {
            max_psi: traj.max_psi(inst),
            min_xi: traj.xi.iter().copied().fold(f64::INFINITY, f64::min),
            max_xi: traj.max_xi(),
            max_speed: traj.max_speed(),
            xi_bound,
            speed_bound: inst.m_bar + xi_bound * geo.m_psi_bar,
        }
    }

    /// Set invariance, multiplier bound and speed bound with the given slack.
    pub fn holds(&self, psi_tol: f64, xi_tol: f64, speed_tol: f64) -> bool {
        self.max_psi <= psi_tol
            && self.min_xi >= 0.0
            && self.max_xi <= self.xi_bound + xi_tol
            && self.max_speed <= self.speed_bound + speed_tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controls::uniform_grid;
    use crate::instance::{builtin, closed_form_solution, Params};
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn annulus() -> ProblemInstance {
        builtin("annulus_example", &Params::new()).unwrap()
    }

    #[test]
    fn penalty_vanishes_deep_inside() {
        let (xi, _) = penalty_factor(100.0, -5.0);
        assert!(xi * 12.0 < 1e-200);
    }

    #[test]
    fn rhs_on_inner_circle() {
        let inst = annulus();
        let gamma = 37.0;
        let v = penalty_rhs(&inst, 0.0, &[1.0, 0.0], &[0.0], gamma).unwrap();
        assert_relative_eq!(v[0], -1.0 + 6.0 * gamma, epsilon = 1e-12);
        assert_relative_eq!(v[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clamped_exponent_stays_finite() {
        let (xi, d) = penalty_factor(1e4, 1.0);
        assert!(xi.is_finite());
        assert_eq!(d, 0.0);
    }

    #[test]
    fn interior_drift_is_a_straight_line() {
        let inst = builtin("interior_drift", &Params::new()).unwrap();
        let grid = uniform_grid(0.0, 1.0, 50);
        let u = GridControl::constant(&grid, &[0.5]);
        let traj = integrate_penalized(&inst, &[0.0, 0.0], &u, 100.0, &IntegratorOptions::default()).unwrap();
        for (t, x) in traj.grid.iter().zip(&traj.states) {
            assert!((x[0] - 1.5 * t).abs() <= 1e-10);
            assert!((x[1] - 0.5 * t).abs() <= 1e-10);
        }
        assert!(reconstruct_xi(&inst, &traj, 1e-8).unwrap().iter().all(|x| *x == 0.0));
        let cu = integrate_catching_up(&inst, &[0.0, 0.0], &u).unwrap();
        for (a, b) in cu.states.iter().zip(&traj.states) {
            assert!(dist(a, b) <= 1e-12);
        }
    }

    #[test]
    fn reconstruct_closed_form_xi() {
        let inst = annulus();
        let opt = closed_form_solution("annulus_example").unwrap();
        let grid = uniform_grid(0.0, FRAC_PI_2, 200);
        let traj = Trajectory {
            states: grid.iter().map(|&t| opt.state(t)).collect(),
            velocities: grid.iter().map(|&t| opt.velocity(t)).collect(),
            controls: grid.iter().map(|&t| opt.control(t)).collect(),
            xi: vec![0.0; grid.len()],
            gamma: None,
            substeps: Vec::new(),
            grid,
        };
        for xi in reconstruct_xi(&inst, &traj, 1e-8).unwrap() {
            assert!((xi - 1.0 / 6.0).abs() <= 1e-8);
        }
    }

    #[test]
    fn shifted_control_xi_formula() {
        // On the unit circle with u = t + 0.3 the radial balance gives
        // xi = (1 + 0.3 (cos - sin)) / 6 wherever the state stays on it.
        let inst = annulus();
        let grid = uniform_grid(0.0, FRAC_PI_2, 400);
        let traj = Trajectory {
            states: grid.iter().map(|&t| vec![t.cos(), t.sin()]).collect(),
            velocities: grid
                .iter()
                .map(|&t| {
                    // Tangential part of f_Phi only.
                    let x = [t.cos(), t.sin()];
                    let f = inst.f_phi_vec(t, &x, &[t + 0.3]);
                    let tan = [-x[1], x[0]];
                    let c = f[0] * tan[0] + f[1] * tan[1];
                    vec![c * tan[0], c * tan[1]]
                })
                .collect(),
            controls: grid.iter().map(|&t| vec![t + 0.3]).collect(),
            xi: vec![0.0; grid.len()],
            gamma: None,
            substeps: Vec::new(),
            grid: grid.clone(),
        };
        let xi = reconstruct_xi(&inst, &traj, 1e-8).unwrap();
        for (t, v) in grid.iter().zip(&xi) {
            assert_relative_eq!(*v, (1.0 + 0.3 * (t.cos() - t.sin())) / 6.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn catching_up_rejects_large_steps() {
        let inst = annulus();
        let grid = uniform_grid(0.0, FRAC_PI_2, 10);
        let u = GridControl::from_fn(&grid, 1, |t| vec![t]);
        assert!(matches!(
            integrate_catching_up(&inst, &[1.0, 0.0], &u),
            Err(Error::OutsideProxRadius { .. })
        ));
    }
}
