//! Continuation in the penalty parameter.

use std::fmt;
use std::sync::Arc;

use crate::certificate::{recover_multipliers, Candidate};
use crate::controls::GridControl;
use crate::dynamics::{cell_mean_xi, integrate_penalized, IntegratorOptions};
use crate::error::{Error, Result};
use crate::instance::{AnalyticOptimum, EndpointSet, ProblemInstance};
use crate::linalg::{dist, norm};
use crate::schedule::PenaltySchedule;

use super::stage::{solve_stage, InitialState, PenalizedSolveState, StageBudget};
use super::{adjoint_integrate_penalized, evaluate, StageData, StageRefs, TerminalTarget};

/// Where the reference pair of each stage comes from.
#[derive(Clone)]
pub enum ReferenceMode {
    /// A known minimizer: stages are localized around it and the terminal
    /// set is shifted by the gap between its penalized and exact endpoints.
    Analytic(Arc<dyn AnalyticOptimum>),
    /// Each stage is referenced to the previous stage's solution; no
    /// localization.
    PreviousStage,
}

impl fmt::Debug for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceMode::Analytic(_) => f.write_str("Analytic"),
            ReferenceMode::PreviousStage => f.write_str("PreviousStage"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContinuationOptions {
    pub budget: StageBudget,
    pub integrator: IntegratorOptions,
    pub mode: ReferenceMode,
    /// Localization radius in analytic mode; the instance's `delta` when
    /// unset.
    pub delta: Option<f64>,
}

impl ContinuationOptions {
    pub fn new(inst: &ProblemInstance, mode: ReferenceMode) -> Self {
        ContinuationOptions {
            budget: StageBudget::for_geometry(&inst.geometry),
            integrator: IntegratorOptions::default(),
            mode,
            delta: None,
        }
    }
}

/// One line of the convergence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationRow {
    pub k: usize,
    pub gamma: f64,
    pub cost: f64,
    /// Sup distance of the control from the previous stage's.
    pub du_sup: f64,
    /// Sup distance of the state from the previous stage's.
    pub dx_sup: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationResult {
    pub stages: Vec<PenalizedSolveState>,
    pub candidate: Candidate,
    pub table: Vec<ContinuationRow>,
}

impl ContinuationResult {
    pub fn last(&self) -> &PenalizedSolveState {
        self.stages.last().expect("at least one stage")
    }
}

fn sup_node_distance(a: &GridControl, b: &GridControl) -> f64 {
    (0..a.nodes())
        .map(|i| dist(a.node(i), b.node(i)))
        .fold(0.0, f64::max)
}

fn sup_state_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| dist(x, y)).fold(0.0, f64::max)
}

/// Width of the band `{|psi| <= ln(gamma / 1e-6) / gamma}` outside which the
/// penalty force is below `1e-6`.
pub fn penalty_band(gamma: f64) -> f64 {
    (gamma / 1e-6).ln() / gamma
}

/// Solves the penalized problems of `schedule` in order, warm-starting each
/// stage from the previous one, and assembles a multiplier candidate from
/// the last stage.
pub fn continuation_solve(
    inst: &ProblemInstance,
    schedule: &PenaltySchedule,
    grid: &[f64],
    opts: &ContinuationOptions,
) -> Result<ContinuationResult> {
    if schedule.is_empty() {
        return Err(Error::InvalidParameter("empty penalty schedule".into()));
    }
    let n = inst.n();
    let m = inst.m();
    let singleton = match &inst.c0 {
        EndpointSet::Singleton(p) => Some(p.clone()),
        _ => None,
    };

    let analytic = match &opts.mode {
        ReferenceMode::Analytic(opt) => {
            let u = GridControl::from_fn(grid, m, |t| opt.control(t));
            let states: Vec<Vec<f64>> = grid.iter().map(|&t| opt.state(t)).collect();
            Some((opt.clone(), u, states))
        }
        ReferenceMode::PreviousStage => None,
    };

    let mut x0 = match (&singleton, &analytic) {
        (Some(p), _) => p.clone(),
        (None, Some((opt, _, _))) => opt.state(grid[0]),
        (None, None) => inst.x0_guess.clone(),
    };
    let mut u = GridControl::from_fn(grid, m, |t| (inst.control_guess)(t));
    let mut prev_states: Option<Vec<Vec<f64>>> = None;
    let mut prev_u: Option<GridControl> = None;
    let mut stages = Vec::with_capacity(schedule.len());
    let mut table = Vec::with_capacity(schedule.len());
    let mut terminal_used = TerminalTarget::unshifted(&inst.c1, n);

    for k in 0..schedule.len() {
        let gamma = schedule.gammas[k];
        let initial = match &singleton {
            Some(p) => InitialState::Fixed(schedule.shift_initial_point(&inst.geometry, p, k)),
            None => InitialState::Free {
                set: inst.c0.clone(),
                rho: schedule.rhos[k],
            },
        };
        let (refs, terminal) = match &analytic {
            Some((opt, ubar, xbar)) => {
                let x0_ref = opt.state(grid[0]);
                let start = match &initial {
                    InitialState::Fixed(c) => c.clone(),
                    InitialState::Free { .. } => x0_ref.clone(),
                };
                let penalized = integrate_penalized(inst, &start, ubar, gamma, &opts.integrator)?;
                let x1_bar = xbar.last().unwrap();
                let shift: Vec<f64> = penalized
                    .terminal()
                    .iter()
                    .zip(x1_bar)
                    .map(|(a, b)| a - b)
                    .collect();
                (
                    StageRefs {
                        x0: x0_ref,
                        u: ubar.clone(),
                        states: Some(xbar.clone()),
                        delta: Some(opts.delta.unwrap_or(inst.delta)),
                    },
                    TerminalTarget {
                        base: inst.c1.clone(),
                        shift,
                    },
                )
            }
            None => (
                StageRefs {
                    x0: x0.clone(),
                    u: u.clone(),
                    states: None,
                    delta: None,
                },
                TerminalTarget::unshifted(&inst.c1, n),
            ),
        };
        let state = solve_stage(
            inst,
            gamma,
            &refs,
            &initial,
            &terminal,
            (&x0, &u),
            &opts.budget,
            &opts.integrator,
        )
        .map_err(|e| match e {
            Error::Stalled { reason, .. } => Error::Stalled {
                stage: Some(k),
                reason,
            },
            other => other,
        })?;

        let du_sup = prev_u
            .as_ref()
            .map(|p| sup_node_distance(&state.control, p))
            .unwrap_or(0.0);
        let dx_sup = prev_states
            .as_ref()
            .map(|p| sup_state_distance(&state.trajectory.states, p))
            .unwrap_or(0.0);
        table.push(ContinuationRow {
            k,
            gamma,
            cost: state.cost,
            du_sup,
            dx_sup,
            grad_norm: state.grad_norm,
        });
        x0 = state.x0.clone();
        u = state.control.clone();
        prev_u = Some(state.control.clone());
        prev_states = Some(state.trajectory.states.clone());
        terminal_used = terminal;
        stages.push(state);
    }

    let last = stages.last().unwrap();
    let candidate = assemble_candidate(inst, last, &terminal_used, &opts.integrator)?;
    Ok(ContinuationResult {
        stages,
        candidate,
        table,
    })
}

/// Multiplier candidate from a stage solution: the penalized adjoint from the
/// transversality value `-(grad_1 g + 2 mu (x(t_b) - proj))`, normalized so
/// that `|p(t_b)| + lambda = 1`, with the measure recovered from the adjoint
/// increments.
pub fn assemble_candidate(
    inst: &ProblemInstance,
    state: &PenalizedSolveState,
    terminal: &TerminalTarget,
    integrator: &IntegratorOptions,
) -> Result<Candidate> {
    let n = inst.n();
    let gamma = state.gamma;
    let refs = StageRefs {
        x0: state.x0.clone(),
        u: state.control.clone(),
        states: None,
        delta: None,
    };
    let data = StageData {
        inst,
        gamma,
        refs: &refs,
        terminal,
        mu: state.mu,
        integrator,
    };
    let eval = evaluate(&data, &state.x0, &state.control, None)?;
    let traj = &eval.traj;
    let x0 = traj.initial();
    let x1 = traj.terminal();
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    inst.cost.gradient(x0, x1, &mut g0, &mut g1);
    let proj = terminal.project(x1);
    let p_terminal: Vec<f64> = (0..n)
        .map(|a| -(g1[a] + 2.0 * state.mu * (x1[a] - proj[a])))
        .collect();
    let raw = adjoint_integrate_penalized(inst, traj, &eval.tape, &state.control, gamma, &p_terminal)?;
    let c = 1.0 + norm(&p_terminal);
    let scaled: Vec<Vec<f64>> = raw
        .iter()
        .map(|p| p.iter().map(|a| a / c).collect())
        .collect();
    let band = penalty_band(gamma);
    let (p, nu) = recover_multipliers(
        inst,
        &traj.grid,
        &traj.states,
        &state.control,
        &traj.xi,
        &scaled,
        band,
    );
    Ok(Candidate {
        grid: traj.grid.clone(),
        states: traj.states.clone(),
        control: state.control.clone(),
        xi: traj.xi.clone(),
        xi_cells: Some(cell_mean_xi(inst, traj, &eval.tape, gamma)),
        p,
        lambda: Some(1.0 / c),
        nu: Some(nu),
        band,
    })
}
