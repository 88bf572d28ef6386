//! Recovery of the boundary measure and adjoint jumps from a sampled
//! adjoint.

use crate::controls::GridControl;
use crate::instance::ProblemInstance;
use crate::linalg::{dot, norm};

use super::{adjoint_rate, BVPath, DerivativeBundle, SignedMeasure};

/// Splits a sampled adjoint into a BV path and a boundary measure.
///
/// Per cell the increment not explained by the smooth part of the adjoint
/// equation is projected onto `grad psi`. Cells whose normal mass exceeds
/// five times the neighbouring scale become atoms at their right node; the
/// rest define a node density. Both are set to zero away from the band
/// `|psi| <= band`.
#[allow(clippy::too_many_arguments)]
pub fn recover_multipliers(
    inst: &ProblemInstance,
    grid: &[f64],
    states: &[Vec<f64>],
    control: &GridControl,
    xi: &[f64],
    p_nodes: &[Vec<f64>],
    band: f64,
) -> (BVPath, SignedMeasure) {
    let n = inst.n();
    let cells = grid.len() - 1;
    let bundle = DerivativeBundle::along(inst, grid, states, control);
    let grads: Vec<Vec<f64>> = states.iter().map(|x| inst.geometry.grad_psi_vec(x)).collect();
    let in_band: Vec<bool> = states
        .iter()
        .map(|x| inst.geometry.eval_psi(x).abs() <= band)
        .collect();
    let mut tmp = vec![0.0; n];
    let p_sup = p_nodes.iter().map(|p| norm(p)).fold(0.0, f64::max);

    let normal_mass = |i: usize, right: &[f64], tmp: &mut [f64]| -> f64 {
        let h = grid[i + 1] - grid[i];
        let f0 = adjoint_rate(&bundle, xi[i], &p_nodes[i], i, n, tmp);
        let f1 = adjoint_rate(&bundle, xi[i + 1], right, i + 1, n, tmp);
        let g: Vec<f64> = (0..n).map(|a| 0.5 * (grads[i][a] + grads[i + 1][a])).collect();
        let gg = dot(&g, &g);
        if gg == 0.0 {
            return 0.0;
        }
        let r: Vec<f64> = (0..n)
            .map(|a| p_nodes[i + 1][a] - p_nodes[i][a] - 0.5 * h * (f0[a] + f1[a]))
            .collect();
        dot(&r, &g) / gg
    };

    let masses: Vec<f64> = (0..cells)
        .map(|i| normal_mass(i, &p_nodes[i + 1], &mut tmp))
        .collect();

    let mut atom_cell = vec![false; cells];
    for i in 0..cells {
        if !in_band[i + 1] {
            continue;
        }
        let lo = i.saturating_sub(3);
        let hi = (i + 4).min(cells);
        let scale = (lo..hi)
            .filter(|&j| j != i)
            .map(|j| masses[j].abs())
            .fold(0.0, f64::max);
        let h = grid[i + 1] - grid[i];
        let floor = 10.0 * h * (1.0 + p_sup);
        atom_cell[i] = masses[i].abs() > 5.0 * scale && masses[i].abs() > floor;
    }

    let mut atoms = Vec::new();
    let mut nu_atoms = Vec::new();
    for i in (0..cells).filter(|&i| atom_cell[i]) {
        let j = i + 1;
        let gg = dot(&grads[j], &grads[j]);
        if gg == 0.0 {
            continue;
        }
        // Two passes: the smooth part is re-evaluated at the left limit.
        let mut mass = dot(
            &(0..n)
                .map(|a| p_nodes[j][a] - p_nodes[i][a])
                .collect::<Vec<_>>(),
            &grads[j],
        ) / gg;
        for _ in 0..2 {
            let left: Vec<f64> = (0..n).map(|a| p_nodes[j][a] - grads[j][a] * mass).collect();
            let h = grid[j] - grid[i];
            let f0 = adjoint_rate(&bundle, xi[i], &p_nodes[i], i, n, &mut tmp);
            let f1 = adjoint_rate(&bundle, xi[j], &left, j, n, &mut tmp);
            let r: Vec<f64> = (0..n)
                .map(|a| p_nodes[j][a] - p_nodes[i][a] - 0.5 * h * (f0[a] + f1[a]))
                .collect();
            mass = dot(&r, &grads[j]) / gg;
        }
        atoms.push((j, grads[j].iter().map(|g| g * mass).collect()));
        nu_atoms.push((j, mass));
    }

    let is_atom = |k: usize| nu_atoms.iter().any(|(j, _)| *j == k);
    let mut density = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        if !in_band[k] || is_atom(k) {
            continue;
        }
        let mut sum = 0.0;
        let mut count = 0.0;
        if k > 0 && !atom_cell[k - 1] {
            sum += masses[k - 1] / (grid[k] - grid[k - 1]);
            count += 1.0;
        }
        if k < cells && !atom_cell[k] {
            sum += masses[k] / (grid[k + 1] - grid[k]);
            count += 1.0;
        }
        if count > 0.0 {
            density[k] = sum / count;
        }
    }

    (
        BVPath {
            grid: grid.to_vec(),
            values: p_nodes.to_vec(),
            atoms,
        },
        SignedMeasure {
            density,
            atoms: nu_atoms,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::{analytic_candidate, check_adjoint};
    use crate::instance::{builtin, closed_form_solution, Params};

    #[test]
    fn recovers_terminal_atom_of_closed_form() {
        let inst = builtin("annulus_example", &Params::new()).unwrap();
        let opt = closed_form_solution("annulus_example").unwrap();
        let cand = analytic_candidate(&inst, opt.as_ref(), 1000);
        let (p, nu) = recover_multipliers(
            &inst,
            &cand.grid,
            &cand.states,
            &cand.control,
            &cand.xi,
            &cand.p.values,
            cand.band,
        );
        assert_eq!(nu.atoms.len(), 1);
        let (j, mass) = nu.atoms[0];
        assert_eq!(j, 1000);
        assert!((mass - 1.0 / 16.0).abs() < 1e-3, "{mass}");
        let bundle = DerivativeBundle::along(&inst, &cand.grid, &cand.states, &cand.control);
        let (cell, atom) =
            check_adjoint(&inst, &cand.grid, &cand.states, &cand.xi, &p, &nu, &bundle).unwrap();
        assert!(cell < 1e-3, "{cell}");
        assert_eq!(atom, 0.0);
    }
}
