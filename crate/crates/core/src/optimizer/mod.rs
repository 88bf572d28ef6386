//! Penalized optimal control: cost, discrete-adjoint gradient, stage solver
//! and the continuation in the penalty parameter.

pub mod adjoint;
pub mod continuation;
pub mod stage;

pub use adjoint::{adjoint_integrate_penalized, discrete_backward};
pub use continuation::{
    continuation_solve, ContinuationOptions, ContinuationResult, ContinuationRow, ReferenceMode,
};
pub use stage::{solve_stage, PenalizedSolveState, StageBudget};

use crate::controls::{z_accumulator, GridControl};
use crate::dynamics::{integrate_penalized_taped, IntegratorOptions, Tape, Trajectory};
use crate::error::{Error, Result};
use crate::instance::{EndpointSet, ProblemInstance};
use crate::linalg::{dist, dot, norm};

/// Reference pair `(x_bar, u_bar)` of a penalized problem.
#[derive(Debug, Clone)]
pub struct StageRefs {
    pub x0: Vec<f64>,
    pub u: GridControl,
    /// Reference states on the grid; enables the state localization term.
    pub states: Option<Vec<Vec<f64>>>,
    /// Localization radius, applied to controls, states and `z(t_b)` when
    /// set.
    pub delta: Option<f64>,
}

/// `C_1` translated by `shift`, the part of the stage terminal set used by
/// the endpoint penalty.
#[derive(Debug, Clone)]
pub struct TerminalTarget {
    pub base: EndpointSet,
    pub shift: Vec<f64>,
}

impl TerminalTarget {
    pub fn unshifted(base: &EndpointSet, n: usize) -> Self {
        TerminalTarget {
            base: base.clone(),
            shift: vec![0.0; n],
        }
    }

    pub fn project(&self, y: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = y.iter().zip(&self.shift).map(|(a, s)| a - s).collect();
        self.base
            .project(&z)
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| a + s)
            .collect()
    }

    pub fn distance(&self, y: &[f64]) -> f64 {
        dist(y, &self.project(y))
    }

    /// Orthonormal directions along which the squared distance to the set
    /// curves at `y`.
    pub fn normal_basis(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let n = y.len();
        let z: Vec<f64> = y.iter().zip(&self.shift).map(|(a, s)| a - s).collect();
        let unit = |i: usize| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        };
        match &self.base {
            EndpointSet::Singleton(_) => (0..n).map(unit).collect(),
            EndpointSet::HalfLineRay { origin, direction } => {
                let rel: Vec<f64> = z.iter().zip(origin).map(|(a, o)| a - o).collect();
                if dot(&rel, direction) <= 0.0 {
                    return (0..n).map(unit).collect();
                }
                let mut basis: Vec<Vec<f64>> = Vec::new();
                for i in 0..n {
                    let mut v = unit(i);
                    let c = direction[i];
                    for a in 0..n {
                        v[a] -= c * direction[a];
                    }
                    for b in &basis {
                        let c = dot(&v, b);
                        for a in 0..n {
                            v[a] -= c * b[a];
                        }
                    }
                    let len = norm(&v);
                    if len > 1e-8 {
                        basis.push(v.iter().map(|a| a / len).collect());
                    }
                }
                basis
            }
            EndpointSet::Box { lo, hi } => (0..n)
                .filter(|&i| z[i] < lo[i] || z[i] > hi[i])
                .map(unit)
                .collect(),
            EndpointSet::LevelSet(func) => {
                if func.value(&z) > 0.0 {
                    let mut g = vec![0.0; n];
                    func.gradient(&z, &mut g);
                    let len = norm(&g);
                    if len > 0.0 {
                        return vec![g.iter().map(|a| a / len).collect()];
                    }
                }
                Vec::new()
            }
        }
    }
}

/// Everything that defines one penalized problem except the iterate.
#[derive(Debug, Clone)]
pub struct StageData<'a> {
    pub inst: &'a ProblemInstance,
    pub gamma: f64,
    pub refs: &'a StageRefs,
    pub terminal: &'a TerminalTarget,
    /// Weight of the endpoint and localization penalties.
    pub mu: f64,
    pub integrator: &'a IntegratorOptions,
}

/// Terms of the stage objective at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub g: f64,
    pub u0_term: f64,
    /// `z(t_b) / 2`.
    pub z_term: f64,
    pub x0_term: f64,
    pub terminal_penalty: f64,
    pub z_penalty: f64,
    pub state_penalty: f64,
    pub z: f64,
    pub terminal_distance: f64,
    pub total: f64,
}

impl CostBreakdown {
    /// The penalized cost without the constraint penalties.
    pub fn cost_j(&self) -> f64 {
        self.g + self.u0_term + self.z_term + self.x0_term
    }
}

/// `g(x(0), x(1)) + (|u(0) - u_bar(0)|^2 + z(1) + |x(0) - x_bar(0)|^2) / 2`.
pub fn cost_j(
    inst: &ProblemInstance,
    traj: &Trajectory,
    z_terminal: f64,
    u: &GridControl,
    refs: &StageRefs,
) -> Result<f64> {
    let g = inst.cost.value(traj.initial(), traj.terminal());
    if !g.is_finite() {
        return Err(Error::GInfinite);
    }
    let du0 = dist(u.node(0), refs.u.node(0));
    let dx0 = dist(traj.initial(), &refs.x0);
    Ok(g + 0.5 * (du0 * du0 + z_terminal + dx0 * dx0))
}

/// An integrated iterate with its cost terms.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub traj: Trajectory,
    pub tape: Tape,
    pub cost: CostBreakdown,
}

fn positive_part(v: f64) -> f64 {
    v.max(0.0)
}

fn node_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for i in 0..n - 1 {
        let h = grid[i + 1] - grid[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Integrates `(x0, u)` and evaluates the stage objective.
pub fn evaluate(
    data: &StageData<'_>,
    x0: &[f64],
    u: &GridControl,
    frozen: Option<&[u32]>,
) -> Result<Evaluation> {
    let inst = data.inst;
    let (traj, tape) = integrate_penalized_taped(inst, x0, u, data.gamma, data.integrator, frozen)?;
    let z = *z_accumulator(u, &data.refs.u)?.last().unwrap();
    let g = inst.cost.value(traj.initial(), traj.terminal());
    if !g.is_finite() {
        return Err(Error::GInfinite);
    }
    let du0 = dist(u.node(0), data.refs.u.node(0));
    let dx0 = dist(x0, &data.refs.x0);
    let d = data.terminal.distance(traj.terminal());
    let mut cost = CostBreakdown {
        g,
        u0_term: 0.5 * du0 * du0,
        z_term: 0.5 * z,
        x0_term: 0.5 * dx0 * dx0,
        terminal_penalty: data.mu * d * d,
        z,
        terminal_distance: d,
        ..Default::default()
    };
    if let Some(delta) = data.refs.delta {
        cost.z_penalty = data.mu * positive_part(z - delta).powi(2);
        if let Some(states) = &data.refs.states {
            let w = node_weights(&traj.grid);
            cost.state_penalty = data.mu
                * traj
                    .states
                    .iter()
                    .zip(states)
                    .zip(&w)
                    .map(|((x, r), w)| {
                        let e = dist(x, r);
                        w * positive_part(e * e - delta * delta).powi(2)
                    })
                    .sum::<f64>();
        }
    }
    cost.total = cost.g
        + cost.u0_term
        + cost.z_term
        + cost.x0_term
        + cost.terminal_penalty
        + cost.z_penalty
        + cost.state_penalty;
    Ok(Evaluation { traj, tape, cost })
}

/// Gradient of the stage objective plus terminal-state sensitivities.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub x0: Vec<f64>,
    /// Node-major, flat, same layout as `GridControl::values`.
    pub u: Vec<f64>,
    /// `d <w_b, x_N> / du` for each requested direction `w_b`.
    pub sensitivities: Vec<Vec<f64>>,
}

/// Exact gradient of the discretized stage objective with respect to the
/// initial state and the control nodes.
pub fn gradient(
    data: &StageData<'_>,
    u: &GridControl,
    eval: &Evaluation,
    directions: &[Vec<f64>],
) -> Gradient {
    let inst = data.inst;
    let n = inst.n();
    let traj = &eval.traj;
    let x0 = traj.initial();
    let x1 = traj.terminal();
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    inst.cost.gradient(x0, x1, &mut g0, &mut g1);
    let proj = data.terminal.project(x1);
    for a in 0..n {
        g1[a] += 2.0 * data.mu * (x1[a] - proj[a]);
    }

    let mut sources = None;
    if let (Some(delta), Some(states)) = (data.refs.delta, &data.refs.states) {
        let w = node_weights(&traj.grid);
        let src: Vec<Vec<f64>> = traj
            .states
            .iter()
            .zip(states)
            .zip(&w)
            .map(|((x, r), w)| {
                let e = dist(x, r);
                let excess = positive_part(e * e - delta * delta);
                x.iter()
                    .zip(r)
                    .map(|(a, b)| data.mu * w * 2.0 * excess * 2.0 * (a - b))
                    .collect()
            })
            .collect();
        sources = Some(src);
    }

    let mut terminal = vec![g1];
    terminal.extend(directions.iter().cloned());
    let sweep = discrete_backward(inst, u, data.gamma, &eval.tape, &terminal, sources.as_deref());

    let mut gx0 = sweep.initial[0].clone();
    for a in 0..n {
        gx0[a] += g0[a] + (x0[a] - data.refs.x0[a]);
    }

    // Proximal control terms.
    let m = u.m;
    let mut gu = sweep.controls[0].clone();
    let z_scale = 1.0
        + match data.refs.delta {
            Some(delta) => 4.0 * data.mu * positive_part(eval.cost.z - delta),
            None => 0.0,
        };
    for i in 0..u.nodes() - 1 {
        let h = u.grid[i + 1] - u.grid[i];
        for c in 0..m {
            let diff = (u.node(i + 1)[c] - data.refs.u.node(i + 1)[c])
                - (u.node(i)[c] - data.refs.u.node(i)[c]);
            let v = z_scale * diff / h;
            gu[(i + 1) * m + c] += v;
            gu[i * m + c] -= v;
        }
    }
    for c in 0..m {
        gu[c] += u.node(0)[c] - data.refs.u.node(0)[c];
    }

    Gradient {
        x0: gx0,
        u: gu,
        sensitivities: sweep.controls[1..].to_vec(),
    }
}
