use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sweepopt::controls::{uniform_grid, GridControl};
use sweepopt::dynamics::{integrate_penalized_taped, IntegratorOptions};
use sweepopt::instance::{builtin, closed_form_solution, Params, ProblemInstance};
use sweepopt::optimizer::stage::InitialState;
use sweepopt::optimizer::{
    adjoint_integrate_penalized, continuation_solve, cost_j, evaluate, gradient, solve_stage,
    ContinuationOptions, ReferenceMode, StageBudget, StageData, StageRefs, TerminalTarget,
};
use sweepopt::schedule::make_schedule;

fn annulus() -> ProblemInstance {
    builtin("annulus_example", &Params::new()).unwrap()
}

fn analytic_refs(inst: &ProblemInstance, grid: &[f64], delta: Option<f64>) -> StageRefs {
    let opt = closed_form_solution("annulus_example").unwrap();
    StageRefs {
        x0: opt.state(0.0),
        u: GridControl::from_fn(grid, inst.m(), |t| opt.control(t)),
        states: Some(grid.iter().map(|&t| opt.state(t)).collect()),
        delta,
    }
}

/// Largest relative gap between the adjoint gradient and central differences
/// over random directions, with the substep counts frozen.
fn fd_gap(seed: u64, directions: usize) -> f64 {
    let inst = annulus();
    let grid = uniform_grid(0.0, FRAC_PI_2, 100);
    let refs = analytic_refs(&inst, &grid, Some(0.05));
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
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = GridControl::from_fn(&grid, 1, |t| vec![t + 0.3 + 0.1 * (3.0 * t).sin()]);
    let x0 = vec![1.02, 0.01];
    let eval = evaluate(&data, &x0, &u, None).unwrap();
    let grad = gradient(&data, &u, &eval, &[]);
    let frozen = eval.tape.substeps.clone();
    let step = 1e-6;
    let mut worst = 0.0_f64;
    for _ in 0..directions {
        let du: Vec<f64> = (0..u.values.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dx: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let at = |s: f64| {
            let mut v = u.clone();
            for (a, d) in v.values.iter_mut().zip(&du) {
                *a += s * d;
            }
            let x: Vec<f64> = x0.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
            evaluate(&data, &x, &v, Some(&frozen)).unwrap().cost.total
        };
        let fd = (at(step) - at(-step)) / (2.0 * step);
        let exact: f64 = grad.u.iter().zip(&du).map(|(g, d)| g * d).sum::<f64>()
            + grad.x0.iter().zip(&dx).map(|(g, d)| g * d).sum::<f64>();
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-3));
    }
    worst
}

#[test]
fn gradient_matches_central_differences() {
    let gap = fd_gap(7, 20);
    assert!(gap <= 1e-6, "relative gap {gap:.3e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]
    #[test]
    fn gradient_matches_for_any_seed(seed in 0u64..1000) {
        prop_assert!(fd_gap(seed, 3) <= 1e-6);
    }
}

#[test]
fn cost_at_reference_is_endpoint_term_only() {
    let inst = annulus();
    let grid = uniform_grid(0.0, FRAC_PI_2, 200);
    let refs = analytic_refs(&inst, &grid, None);
    let (traj, _) =
        integrate_penalized_taped(&inst, &refs.x0, &refs.u, 50.0, &IntegratorOptions::default(), None).unwrap();
    let j = cost_j(&inst, &traj, 0.0, &refs.u, &refs).unwrap();
    let g = inst.cost.value(traj.initial(), traj.terminal());
    assert_eq!(j, g);
}

#[test]
fn stage_solution_reaches_terminal_set_with_descending_cost() {
    let inst = annulus();
    let grid = uniform_grid(0.0, FRAC_PI_2, 400);
    let refs = analytic_refs(&inst, &grid, Some(inst.delta));
    let terminal = TerminalTarget::unshifted(&inst.c1, 2);
    let guess = GridControl::from_fn(&grid, 1, |t| (inst.control_guess)(t));
    let budget = StageBudget::for_geometry(&inst.geometry);
    let state = solve_stage(
        &inst,
        30.0,
        &refs,
        &InitialState::Fixed(vec![1.0, 0.0]),
        &terminal,
        (&[1.0, 0.0], &guess),
        &budget,
        &IntegratorOptions::default(),
    )
    .unwrap();
    assert!(state.terminal_distance <= budget.endpoint_tol);
    assert!(state.z_terminal < inst.delta);
    assert!(state.iterations > 0);
    let rises = state.history.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= budget.max_escalations);
}

#[test]
fn continuation_recovers_closed_form() {
    let inst = annulus();
    let schedule = make_schedule(inst.m_bar, inst.geometry.eta, 4.0 * inst.m_bar / inst.geometry.eta, 3.0, 8).unwrap();
    let grid = uniform_grid(0.0, FRAC_PI_2, 2000);
    let opt = closed_form_solution("annulus_example").unwrap();
    let opts = ContinuationOptions::new(&inst, ReferenceMode::Analytic(opt));
    let result = continuation_solve(&inst, &schedule, &grid, &opts).unwrap();
    let last = result.last();
    let du = (0..grid.len())
        .map(|i| (last.control.node(i)[0] - grid[i]).abs())
        .fold(0.0, f64::max);
    let dx = last.trajectory.sup_distance(|t| vec![t.cos(), t.sin()]);
    let g = inst.cost.value(last.trajectory.initial(), last.trajectory.terminal());
    assert!(du <= 0.02, "{du}");
    assert!(dx <= 0.02, "{dx}");
    assert!(g.abs() <= 1e-3, "{g}");
    for w in result.table.windows(2) {
        assert!(w[1].gamma > w[0].gamma);
        assert!(w[1].cost <= w[0].cost + 1e-12);
    }
}

#[test]
fn single_stage_continuation_equals_stage_solve() {
    let inst = annulus();
    let schedule = make_schedule(inst.m_bar, inst.geometry.eta, 20.0, 3.0, 1).unwrap();
    let grid = uniform_grid(0.0, FRAC_PI_2, 200);
    let opts = ContinuationOptions::new(&inst, ReferenceMode::PreviousStage);
    let result = continuation_solve(&inst, &schedule, &grid, &opts).unwrap();
    let x0 = schedule.shift_initial_point(&inst.geometry, &[1.0, 0.0], 0);
    let guess = GridControl::from_fn(&grid, 1, |t| (inst.control_guess)(t));
    let refs = StageRefs {
        x0: vec![1.0, 0.0],
        u: guess.clone(),
        states: None,
        delta: None,
    };
    let direct = solve_stage(
        &inst,
        20.0,
        &refs,
        &InitialState::Fixed(x0),
        &TerminalTarget::unshifted(&inst.c1, 2),
        (&[1.0, 0.0], &guess),
        &opts.budget,
        &opts.integrator,
    )
    .unwrap();
    assert_eq!(result.last().control, direct.control);
    assert_eq!(result.last().cost, direct.cost);
}

#[test]
fn penalized_adjoint_tracks_closed_form() {
    let inst = annulus();
    let schedule = make_schedule(inst.m_bar, inst.geometry.eta, 4.0 * inst.m_bar / inst.geometry.eta, 3.0, 8).unwrap();
    let gamma = *schedule.gammas.last().unwrap();
    let grid = uniform_grid(0.0, FRAC_PI_2, 2000);
    let u = GridControl::from_fn(&grid, 1, |t| vec![t]);
    let x0 = schedule.shift_initial_point(&inst.geometry, &[1.0, 0.0], 7);
    let (traj, tape) =
        integrate_penalized_taped(&inst, &x0, &u, gamma, &IntegratorOptions::default(), None).unwrap();
    let p = adjoint_integrate_penalized(&inst, &traj, &tape, &u, gamma, &[0.5, -0.375]).unwrap();
    for (i, &t) in grid.iter().enumerate() {
        if !(0.1..=FRAC_PI_2 - 0.1).contains(&t) {
            continue;
        }
        let e = ((p[i][0] - 0.5 * t.sin()).powi(2) + (p[i][1] + 0.5 * t.cos()).powi(2)).sqrt();
        assert!(e <= 0.05, "t = {t}: {:?}", p[i]);
    }
    let doubled = adjoint_integrate_penalized(&inst, &traj, &tape, &u, gamma, &[1.0, -0.75]).unwrap();
    for (a, b) in p.iter().zip(&doubled) {
        for (x, y) in a.iter().zip(b) {
            assert!((2.0 * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn deep_interior_adjoint_is_classical() {
    let inst = builtin("interior_drift", &Params::new()).unwrap();
    let grid = uniform_grid(0.0, 1.0, 50);
    let u = GridControl::constant(&grid, &[0.5]);
    let (traj, tape) =
        integrate_penalized_taped(&inst, &[0.0, 0.0], &u, 100.0, &IntegratorOptions::default(), None).unwrap();
    let p = adjoint_integrate_penalized(&inst, &traj, &tape, &u, 100.0, &[1.0, -2.0]).unwrap();
    for v in &p {
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12);
    }
}
