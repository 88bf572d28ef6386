//! Backward sweeps: the exact adjoint of the discrete RK4 map, and the
//! continuous penalized adjoint equation.

use crate::controls::GridControl;
use crate::dynamics::{
    fill_controls, penalty_jacobians, penalty_rhs_into, stage_weights, SubstepControls, Tape,
    Trajectory, Workspace,
};
use crate::error::{Error, Result};
use crate::instance::ProblemInstance;
use crate::linalg::matvec_t;

/// Result of a discrete backward sweep with several right-hand sides.
#[derive(Debug, Clone)]
pub struct BackwardSweep {
    /// `dJ/dx_0` for each right-hand side.
    pub initial: Vec<Vec<f64>>,
    /// `dJ/du` (node-major, flat) for each right-hand side.
    pub controls: Vec<Vec<f64>>,
}

/// Propagates terminal covectors back through the recorded RK4 map.
///
/// `terminal[r]` is `dJ_r/dx_N`. When given, `sources[i]` is added to the
/// first covector on reaching node `i` (running state terms).
pub fn discrete_backward(
    inst: &ProblemInstance,
    u: &GridControl,
    gamma: f64,
    tape: &Tape,
    terminal: &[Vec<f64>],
    sources: Option<&[Vec<f64>]>,
) -> BackwardSweep {
    let n = inst.n();
    let m = inst.m();
    let r = terminal.len();
    let cells = u.nodes() - 1;
    let mut ws = Workspace::new(n);
    let mut ctrl = SubstepControls {
        u0: vec![0.0; m],
        uh: vec![0.0; m],
        u1: vec![0.0; m],
    };
    let mut lam: Vec<Vec<f64>> = terminal.to_vec();
    if let Some(src) = sources {
        for (a, b) in lam[0].iter_mut().zip(&src[cells]) {
            *a += b;
        }
    }
    let mut grad_u = vec![vec![0.0; u.values.len()]; r];

    let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut y = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut jx = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    let mut ju = [vec![0.0; n * m], vec![0.0; n * m], vec![0.0; n * m], vec![0.0; n * m]];
    let mut gk = vec![0.0; n];
    let mut ybar = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut ubar = vec![0.0; m];

    for i in (0..cells).rev() {
        let (ti, tj) = (u.grid[i], u.grid[i + 1]);
        let msub = tape.substeps[i];
        let h = (tj - ti) / msub as f64;
        let first = tape.offsets[i];
        for j in (0..msub).rev() {
            let tau = ti + j as f64 * h;
            let x = tape.start(first + j as usize);
            fill_controls(u, i, j, msub, &mut ctrl);
            let (w0, wh, w1) = stage_weights(j, msub);
            // Recompute the stage states.
            y[0].copy_from_slice(x);
            penalty_rhs_into(inst, tau, &y[0], &ctrl.u0, gamma, &mut k[0], &mut ws).ok();
            for a in 0..n {
                y[1][a] = x[a] + 0.5 * h * k[0][a];
            }
            penalty_rhs_into(inst, tau + 0.5 * h, &y[1], &ctrl.uh, gamma, &mut k[1], &mut ws).ok();
            for a in 0..n {
                y[2][a] = x[a] + 0.5 * h * k[1][a];
            }
            penalty_rhs_into(inst, tau + 0.5 * h, &y[2], &ctrl.uh, gamma, &mut k[2], &mut ws).ok();
            for a in 0..n {
                y[3][a] = x[a] + h * k[2][a];
            }
            let times = [tau, tau + 0.5 * h, tau + 0.5 * h, tau + h];
            let us = [&ctrl.u0, &ctrl.uh, &ctrl.uh, &ctrl.u1];
            for s in 0..4 {
                penalty_jacobians(inst, times[s], &y[s], us[s], gamma, &mut jx[s], &mut ju[s], &mut ws);
            }
            let weights = [w0, wh, wh, w1];
            for (rr, l) in lam.iter_mut().enumerate() {
                // Stage 4.
                for a in 0..n {
                    gk[a] = h / 6.0 * l[a];
                }
                matvec_t(&jx[3], n, n, &gk, &mut ybar[3]);
                accumulate_control(&ju[3], n, m, &gk, &mut ubar, &mut grad_u[rr], i, weights[3]);
                // Stage 3.
                for a in 0..n {
                    gk[a] = h / 3.0 * l[a] + h * ybar[3][a];
                }
                matvec_t(&jx[2], n, n, &gk, &mut ybar[2]);
                accumulate_control(&ju[2], n, m, &gk, &mut ubar, &mut grad_u[rr], i, weights[2]);
                // Stage 2.
                for a in 0..n {
                    gk[a] = h / 3.0 * l[a] + 0.5 * h * ybar[2][a];
                }
                matvec_t(&jx[1], n, n, &gk, &mut ybar[1]);
                accumulate_control(&ju[1], n, m, &gk, &mut ubar, &mut grad_u[rr], i, weights[1]);
                // Stage 1.
                for a in 0..n {
                    gk[a] = h / 6.0 * l[a] + 0.5 * h * ybar[1][a];
                }
                matvec_t(&jx[0], n, n, &gk, &mut ybar[0]);
                accumulate_control(&ju[0], n, m, &gk, &mut ubar, &mut grad_u[rr], i, weights[0]);
                for a in 0..n {
                    l[a] += ybar[0][a] + ybar[1][a] + ybar[2][a] + ybar[3][a];
                }
            }
        }
        if let Some(src) = sources {
            for (a, b) in lam[0].iter_mut().zip(&src[i]) {
                *a += b;
            }
        }
    }
    BackwardSweep {
        initial: lam,
        controls: grad_u,
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_control(
    ju: &[f64],
    n: usize,
    m: usize,
    gk: &[f64],
    ubar: &mut [f64],
    grad: &mut [f64],
    cell: usize,
    w: f64,
) {
    matvec_t(ju, n, m, gk, ubar);
    for c in 0..m {
        grad[cell * m + c] += (1.0 - w) * ubar[c];
        grad[(cell + 1) * m + c] += w * ubar[c];
    }
}

/// Cubic Hermite interpolation between `(x0, v0)` and `(x1, v1)` over a step
/// of length `h`, at fraction `s`.
fn hermite(x0: &[f64], v0: &[f64], x1: &[f64], v1: &[f64], h: f64, s: f64, out: &mut [f64]) {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    for a in 0..out.len() {
        out[a] = h00 * x0[a] + h10 * h * v0[a] + h01 * x1[a] + h11 * h * v1[a];
    }
}

/// Backward solution of
/// `p' = -(df_Phi/dx)^T p + xi H psi p + gamma xi grad psi <grad psi, p>`
/// from `p(t_b) = p_terminal`, with `xi = gamma e^{gamma psi(x)}`, along a
/// penalized trajectory. Steps follow the recorded substeps; the state
/// between substep starts is Hermite-interpolated. Returns node values.
pub fn adjoint_integrate_penalized(
    inst: &ProblemInstance,
    traj: &Trajectory,
    tape: &Tape,
    u: &GridControl,
    gamma: f64,
    p_terminal: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = inst.n();
    let m = inst.m();
    let cells = traj.len() - 1;
    let mut ws = Workspace::new(n);
    let mut ctrl = SubstepControls {
        u0: vec![0.0; m],
        uh: vec![0.0; m],
        u1: vec![0.0; m],
    };
    let mut jx = vec![0.0; n * n];
    let mut ju = vec![0.0; n * m];
    let mut p = p_terminal.to_vec();
    let mut out = vec![Vec::new(); cells + 1];
    out[cells] = p.clone();
    let mut xm = vec![0.0; n];
    let mut v0 = vec![0.0; n];
    let mut v1 = vec![0.0; n];
    let mut kk = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut q = vec![0.0; n];

    for i in (0..cells).rev() {
        let msub = tape.substeps[i];
        let (ti, tj) = (traj.grid[i], traj.grid[i + 1]);
        let h = (tj - ti) / msub as f64;
        let first = tape.offsets[i];
        for j in (0..msub).rev() {
            let tau = ti + j as f64 * h;
            let xa = tape.start(first + j as usize).to_vec();
            let xb: Vec<f64> = if j + 1 < msub {
                tape.start(first + j as usize + 1).to_vec()
            } else {
                traj.states[i + 1].clone()
            };
            fill_controls(u, i, j, msub, &mut ctrl);
            penalty_rhs_into(inst, tau, &xa, &ctrl.u0, gamma, &mut v0, &mut ws)?;
            penalty_rhs_into(inst, tau + h, &xb, &ctrl.u1, gamma, &mut v1, &mut ws)?;
            hermite(&xa, &v0, &xb, &v1, h, 0.5, &mut xm);
            // Backward RK4 in reversed time: dp/ds = J^T p.
            let states = [&xb, &xm, &xm, &xa];
            let controls = [&ctrl.u1, &ctrl.uh, &ctrl.uh, &ctrl.u0];
            let times = [tau + h, tau + 0.5 * h, tau + 0.5 * h, tau];
            for s in 0..4 {
                let base: Vec<f64> = match s {
                    0 => p.clone(),
                    1 => p.iter().zip(&kk[0]).map(|(a, b)| a + 0.5 * h * b).collect(),
                    2 => p.iter().zip(&kk[1]).map(|(a, b)| a + 0.5 * h * b).collect(),
                    _ => p.iter().zip(&kk[2]).map(|(a, b)| a + h * b).collect(),
                };
                penalty_jacobians(inst, times[s], states[s], controls[s], gamma, &mut jx, &mut ju, &mut ws);
                matvec_t(&jx, n, n, &base, &mut q);
                kk[s].copy_from_slice(&q);
            }
            for a in 0..n {
                p[a] += h / 6.0 * (kk[0][a] + 2.0 * kk[1][a] + 2.0 * kk[2][a] + kk[3][a]);
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::BlowUp {
                    t: tau,
                    reason: "adjoint became non-finite".into(),
                });
            }
        }
        out[i] = p.clone();
    }
    Ok(out)
}
