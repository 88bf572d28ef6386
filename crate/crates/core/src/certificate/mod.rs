//! Residual checks of the first-order necessary conditions for a candidate
//! process and its multipliers.

pub mod measure;

pub use measure::recover_multipliers;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::controls::{uniform_grid, GridControl};
use crate::error::{Error, Result};
use crate::geometry::{classify_with_band, Region};
use crate::instance::{AnalyticOptimum, ControlSet, ProblemInstance};
use crate::linalg::{dist, dot, matvec, matvec_t, norm};

/// A function of bounded variation sampled on a grid: right-continuous node
/// values plus jumps at nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BVPath {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// `(node index, jump)`: the value at the node equals the left limit plus
    /// the jump.
    pub atoms: Vec<(usize, Vec<f64>)>,
}

impl BVPath {
    pub fn continuous(grid: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        BVPath {
            grid,
            values,
            atoms: Vec::new(),
        }
    }

    pub fn jump_at(&self, i: usize) -> Option<&[f64]> {
        self.atoms
            .iter()
            .find(|(k, _)| *k == i)
            .map(|(_, j)| j.as_slice())
    }

    /// Left limit at node `i`.
    pub fn left(&self, i: usize) -> Vec<f64> {
        match self.jump_at(i) {
            Some(j) => self.values[i].iter().zip(j).map(|(v, d)| v - d).collect(),
            None => self.values[i].clone(),
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.values.last().expect("empty path")
    }

    pub fn sup_norm(&self) -> f64 {
        let nodes = self.values.iter().map(|v| norm(v));
        let lefts = self.atoms.iter().map(|(i, _)| norm(&self.left(*i)));
        nodes.chain(lefts).fold(0.0, f64::max)
    }

    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for i in 0..self.values.len() - 1 {
            tv += dist(&self.left(i + 1), &self.values[i]);
        }
        tv + self.atoms.iter().map(|(_, j)| norm(j)).sum::<f64>()
    }

    pub fn scaled(&self, c: f64) -> Self {
        BVPath {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|a| c * a).collect())
                .collect(),
            atoms: self
                .atoms
                .iter()
                .map(|(i, j)| (*i, j.iter().map(|a| c * a).collect()))
                .collect(),
        }
    }
}

/// A signed measure on the grid: node density plus point masses at nodes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignedMeasure {
    pub density: Vec<f64>,
    pub atoms: Vec<(usize, f64)>,
}

impl SignedMeasure {
    pub fn zero(nodes: usize) -> Self {
        SignedMeasure {
            density: vec![0.0; nodes],
            atoms: Vec::new(),
        }
    }

    pub fn atom_at(&self, i: usize) -> Option<f64> {
        self.atoms.iter().find(|(k, _)| *k == i).map(|(_, m)| *m)
    }

    pub fn scaled(&self, c: f64) -> Self {
        SignedMeasure {
            density: self.density.iter().map(|d| c * d).collect(),
            atoms: self.atoms.iter().map(|(i, m)| (*i, c * m)).collect(),
        }
    }
}

/// Derivatives of the data along a candidate, one row-major matrix per node.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    /// `df/dx`.
    pub zeta: Vec<Vec<f64>>,
    /// `df/du`.
    pub omega: Vec<Vec<f64>>,
    /// Hessian of the potential extension.
    pub theta: Vec<Vec<f64>>,
    /// Hessian of `psi`.
    pub vartheta: Vec<Vec<f64>>,
}

impl DerivativeBundle {
    pub fn along(inst: &ProblemInstance, grid: &[f64], states: &[Vec<f64>], u: &GridControl) -> Self {
        let n = inst.n();
        let m = inst.m();
        let mut b = DerivativeBundle {
            zeta: Vec::with_capacity(grid.len()),
            omega: Vec::with_capacity(grid.len()),
            theta: Vec::with_capacity(grid.len()),
            vartheta: Vec::with_capacity(grid.len()),
        };
        for (i, (&t, x)) in grid.iter().zip(states).enumerate() {
            let mut z = vec![0.0; n * n];
            let mut w = vec![0.0; n * m];
            let mut th = vec![0.0; n * n];
            let mut vt = vec![0.0; n * n];
            inst.field.jac_x(t, x, u.node(i), &mut z);
            inst.field.jac_u(t, x, u.node(i), &mut w);
            inst.extension.hess(x, &mut th);
            inst.geometry.hess_psi(x, &mut vt);
            b.zeta.push(z);
            b.omega.push(w);
            b.theta.push(th);
            b.vartheta.push(vt);
        }
        b
    }

    /// Largest relative gap to central differences over every `stride`-th
    /// node.
    pub fn finite_difference_gap(
        &self,
        inst: &ProblemInstance,
        grid: &[f64],
        states: &[Vec<f64>],
        u: &GridControl,
        stride: usize,
    ) -> f64 {
        let n = inst.n();
        let m = inst.m();
        let h = 1e-6;
        let rel = |a: &[f64], b: &[f64]| dist(a, b) / (1.0 + norm(a).max(norm(b)));
        let mut worst = 0.0_f64;
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        let mut gp = vec![0.0; n];
        let mut gm = vec![0.0; n];
        for i in (0..grid.len()).step_by(stride.max(1)) {
            let (t, x, ui) = (grid[i], &states[i], u.node(i));
            let mut fd_z = vec![0.0; n * n];
            let mut fd_v = vec![0.0; n * n];
            let mut fd_t = vec![0.0; n * n];
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                inst.field.eval(t, &xp, ui, &mut fp);
                inst.field.eval(t, &xm, ui, &mut fm);
                inst.geometry.grad_psi(&xp, &mut gp);
                inst.geometry.grad_psi(&xm, &mut gm);
                for r in 0..n {
                    fd_z[r * n + j] = (fp[r] - fm[r]) / (2.0 * h);
                    fd_v[r * n + j] = (gp[r] - gm[r]) / (2.0 * h);
                }
                inst.extension.grad(&xp, &mut gp);
                inst.extension.grad(&xm, &mut gm);
                for r in 0..n {
                    fd_t[r * n + j] = (gp[r] - gm[r]) / (2.0 * h);
                }
            }
            let mut fd_w = vec![0.0; n * m];
            for j in 0..m {
                let mut up = ui.to_vec();
                let mut um = ui.to_vec();
                up[j] += h;
                um[j] -= h;
                inst.field.eval(t, x, &up, &mut fp);
                inst.field.eval(t, x, &um, &mut fm);
                for r in 0..n {
                    fd_w[r * m + j] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            worst = worst
                .max(rel(&self.zeta[i], &fd_z))
                .max(rel(&self.omega[i], &fd_w))
                .max(rel(&self.theta[i], &fd_t))
                .max(rel(&self.vartheta[i], &fd_v));
        }
        worst
    }
}

/// A process with multipliers to be certified.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub grid: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub control: GridControl,
    pub xi: Vec<f64>,
    /// Cell means of `xi`, when known more accurately than the node values.
    pub xi_cells: Option<Vec<f64>>,
    pub p: BVPath,
    /// Recovered from nontriviality when absent.
    pub lambda: Option<f64>,
    /// Taken as zero when absent.
    pub nu: Option<SignedMeasure>,
    /// `|psi| <= band` defines the boundary set used by the slackness and
    /// support checks.
    pub band: f64,
}

/// Tolerance for each check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub nontriviality: f64,
    pub admissibility: f64,
    pub adjoint: f64,
    pub slackness_a: f64,
    pub slackness_b: f64,
    pub transversality: f64,
    pub weak_max: f64,
    pub support: f64,
    /// Distance within which endpoints count as members of `C_0`, `C_1`.
    pub endpoint: f64,
    /// `eps_0` of the quadratic correction for prox-regular control sets.
    pub prox_eps: f64,
}

impl Tolerances {
    pub fn uniform(tol: f64, endpoint: f64) -> Self {
        Tolerances {
            nontriviality: tol,
            admissibility: tol,
            adjoint: tol,
            slackness_a: tol,
            slackness_b: tol,
            transversality: tol,
            weak_max: tol,
            support: tol,
            endpoint,
            prox_eps: 1.0,
        }
    }

    /// Exact candidates: `1e-4` everywhere.
    pub fn analytic() -> Self {
        Self::uniform(1e-4, 1e-9)
    }

    /// Approximate candidates: `0.05 (1 + |p|_inf)`.
    pub fn continuation(p_sup: f64, endpoint: f64) -> Self {
        Self::uniform(0.05 * (1.0 + p_sup), endpoint)
    }
}

/// Non-finite residuals are written as `null`.
mod residual_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    #[serde(with = "residual_serde")]
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub checks: BTreeMap<String, CheckResult>,
    pub overall_pass: bool,
    pub lambda: f64,
    pub p_terminal: Vec<f64>,
    /// `[time, mass]` pairs.
    pub nu_atoms: Vec<[f64; 2]>,
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn check(&self, name: &str) -> &CheckResult {
        &self.checks[name]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Names of the checks in report order.
pub const CHECK_NAMES: &[&str] = &[
    "nontriviality",
    "admissibility",
    "adjoint",
    "slackness_a",
    "slackness_b",
    "transversality",
    "weak_max",
    "support",
];

/// `| |p(t_b)| + lambda - 1 |`.
pub fn check_nontriviality(p: &BVPath, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::NegativeLambda(lambda));
    }
    Ok((norm(p.terminal()) + lambda - 1.0).abs())
}

/// Admissibility: `(max_i |(x_{i+1} - x_i)/h - avg f_Phi + xi_i avg grad psi|,
/// max(0, max psi))`, cellwise. `xi_cells` holds cell means of `xi`; the
/// trapezoid mean of the node values is used when it is absent.
pub fn check_admissibility(
    inst: &ProblemInstance,
    grid: &[f64],
    states: &[Vec<f64>],
    u: &GridControl,
    xi: &[f64],
    xi_cells: Option<&[f64]>,
) -> (f64, f64) {
    let n = inst.n();
    let f: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| inst.f_phi_vec(grid[i], &states[i], u.node(i)))
        .collect();
    let g: Vec<Vec<f64>> = states.iter().map(|x| inst.geometry.grad_psi_vec(x)).collect();
    let mut ode = 0.0_f64;
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let r: Vec<f64> = (0..n)
            .map(|a| {
                let v = (states[i + 1][a] - states[i][a]) / h;
                let drive = 0.5 * (f[i][a] + f[i + 1][a]);
                let force = match xi_cells {
                    Some(c) => c[i] * 0.5 * (g[i][a] + g[i + 1][a]),
                    None => 0.5 * (xi[i] * g[i][a] + xi[i + 1] * g[i + 1][a]),
                };
                v - drive + force
            })
            .collect();
        ode = ode.max(norm(&r));
    }
    let psi_max = states
        .iter()
        .map(|x| inst.geometry.eval_psi(x))
        .fold(0.0, f64::max);
    (ode, psi_max)
}

pub(crate) fn adjoint_rate(
    bundle: &DerivativeBundle,
    xi: f64,
    p: &[f64],
    i: usize,
    n: usize,
    tmp: &mut [f64],
) -> Vec<f64> {
    // (theta - zeta^T) p + xi vartheta p
    let mut out = vec![0.0; n];
    matvec(&bundle.theta[i], n, n, p, tmp);
    out.copy_from_slice(&tmp[..n]);
    matvec_t(&bundle.zeta[i], n, n, p, tmp);
    for a in 0..n {
        out[a] -= tmp[a];
    }
    matvec(&bundle.vartheta[i], n, n, p, tmp);
    for a in 0..n {
        out[a] += xi * tmp[a];
    }
    out
}

/// Largest per-cell residual of the measure-driven adjoint equation, as a
/// rate (cell residual divided by the cell length), and the largest atom
/// mismatch `|jump p - grad psi nu({t})|`.
pub fn check_adjoint(
    inst: &ProblemInstance,
    grid: &[f64],
    states: &[Vec<f64>],
    xi: &[f64],
    p: &BVPath,
    nu: &SignedMeasure,
    bundle: &DerivativeBundle,
) -> Result<(f64, f64)> {
    let n = inst.n();
    for (i, _) in &p.atoms {
        if nu.atom_at(*i).is_none() {
            return Err(Error::UnmatchedAtom { t: grid[*i] });
        }
    }
    for (i, _) in &nu.atoms {
        if p.jump_at(*i).is_none() {
            return Err(Error::UnmatchedAtom { t: grid[*i] });
        }
    }
    let mut tmp = vec![0.0; n];
    let grads: Vec<Vec<f64>> = states.iter().map(|x| inst.geometry.grad_psi_vec(x)).collect();
    let mut cell = 0.0_f64;
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let p0 = &p.values[i];
        let p1 = p.left(i + 1);
        let f0 = adjoint_rate(bundle, xi[i], p0, i, n, &mut tmp);
        let f1 = adjoint_rate(bundle, xi[i + 1], &p1, i + 1, n, &mut tmp);
        let mut r = vec![0.0; n];
        for a in 0..n {
            let integral = 0.5 * h * (f0[a] + f1[a]);
            let measure = 0.5 * h * (grads[i][a] * nu.density[i] + grads[i + 1][a] * nu.density[i + 1]);
            r[a] = (p1[a] - p0[a] - integral - measure) / h;
        }
        cell = cell.max(norm(&r));
    }
    let mut atoms = 0.0_f64;
    for (i, jump) in &p.atoms {
        let mass = nu.atom_at(*i).unwrap_or(0.0);
        let r: Vec<f64> = (0..n).map(|a| jump[a] - grads[*i][a] * mass).collect();
        atoms = atoms.max(norm(&r));
    }
    Ok((cell, atoms))
}

/// `(max xi on the deep interior, max |xi <grad psi, p>|)`, using left
/// limits of `p` at atoms.
pub fn check_slackness(
    inst: &ProblemInstance,
    states: &[Vec<f64>],
    xi: &[f64],
    p: &BVPath,
    band: f64,
) -> (f64, f64) {
    let n = inst.n();
    let mut g = vec![0.0; n];
    let mut a = 0.0_f64;
    let mut b = 0.0_f64;
    for (i, x) in states.iter().enumerate() {
        let psi = inst.geometry.eval_psi(x);
        if classify_with_band(psi, band) == Region::DeepInterior {
            a = a.max(xi[i]);
        }
        inst.geometry.grad_psi(x, &mut g);
        b = b.max((xi[i] * dot(&g, &p.left(i))).abs());
    }
    (a, b)
}

/// Distance of `(p(t_a) - lambda d_0 g, -p(t_b) - lambda d_1 g)` from
/// `N_{C_0}(x(t_a)) x N_{C_1}(x(t_b))`.
pub fn check_transversality(
    inst: &ProblemInstance,
    states: &[Vec<f64>],
    p: &BVPath,
    lambda: f64,
    endpoint_tol: f64,
) -> Result<f64> {
    let n = inst.n();
    let x0 = &states[0];
    let x1 = states.last().unwrap();
    let d0 = inst.c0.distance(x0);
    if d0 > endpoint_tol {
        return Err(Error::EndpointInfeasible {
            which: "initial",
            distance: d0,
        });
    }
    let d1 = inst.c1.distance(x1);
    if d1 > endpoint_tol {
        return Err(Error::EndpointInfeasible {
            which: "terminal",
            distance: d1,
        });
    }
    let cone0 = inst.c0.normal_cone(x0, endpoint_tol)?;
    let cone1 = inst.c1.normal_cone(x1, endpoint_tol)?;
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    inst.cost.gradient(x0, x1, &mut g0, &mut g1);
    let v0: Vec<f64> = (0..n).map(|a| p.values[0][a] - lambda * g0[a]).collect();
    let v1: Vec<f64> = (0..n).map(|a| -p.terminal()[a] - lambda * g1[a]).collect();
    let r0 = cone0.distance(&v0);
    let r1 = cone1.distance(&v1);
    Ok((r0 * r0 + r1 * r1).sqrt())
}

/// `max_t [ max_{u in U(t)} <omega^T p, u> - <omega^T p, u_bar(t)> ]`, with
/// the quadratic correction for prox-regular sets. Left limits of `p` are
/// used at atoms.
pub fn check_weak_max(
    inst: &ProblemInstance,
    u: &GridControl,
    p: &BVPath,
    bundle: &DerivativeBundle,
    prox_eps: f64,
) -> Result<f64> {
    let n = inst.n();
    let m = inst.m();
    let mut c = vec![0.0; m];
    let mut worst = 0.0_f64;
    for i in 0..u.nodes() {
        let pl = p.left(i);
        matvec_t(&bundle.omega[i], n, m, &pl, &mut c);
        let ub = u.node(i);
        let base = dot(&c, ub);
        let best = match inst.control_set(u.grid[i]) {
            ControlSet::Interval { lo, hi } => {
                if c[0] >= 0.0 {
                    c[0] * hi
                } else {
                    c[0] * lo
                }
            }
            ControlSet::Box { lo, hi } => (0..m)
                .map(|k| if c[k] >= 0.0 { c[k] * hi[k] } else { c[k] * lo[k] })
                .sum(),
            ControlSet::Ball { center, radius } => dot(&c, &center) + radius * norm(&c),
            ControlSet::ProxRegular { radius, samples, .. } => {
                if samples.is_empty() {
                    return Err(Error::UnsupportedSetKind(
                        "prox-regular control set without samples".into(),
                    ));
                }
                let k = norm(&c) / prox_eps.min(2.0 * radius);
                samples
                    .iter()
                    .map(|s| dot(&c, s) - k * dist(s, ub).powi(2))
                    .fold(f64::NEG_INFINITY, f64::max)
                    .max(base)
            }
        };
        worst = worst.max(best - base);
    }
    Ok(worst)
}

/// Mass of `nu` away from the boundary set `|psi| <= band`.
pub fn check_support(
    inst: &ProblemInstance,
    grid: &[f64],
    states: &[Vec<f64>],
    nu: &SignedMeasure,
    band: f64,
) -> f64 {
    let off = |i: usize| inst.geometry.eval_psi(&states[i]).abs() > band;
    let mut mass = 0.0;
    for i in 0..grid.len() - 1 {
        let h = grid[i + 1] - grid[i];
        let a = if off(i) { nu.density[i].abs() } else { 0.0 };
        let b = if off(i + 1) { nu.density[i + 1].abs() } else { 0.0 };
        mass += 0.5 * h * (a + b);
    }
    mass + nu
        .atoms
        .iter()
        .filter(|(i, _)| off(*i))
        .map(|(_, m)| m.abs())
        .sum::<f64>()
}

/// Runs every check. Failures to evaluate a check (unmatched atoms,
/// infeasible endpoints, unsupported sets) count as infinite residuals.
pub fn certify(inst: &ProblemInstance, cand: &Candidate, tol: &Tolerances) -> CertificateReport {
    let mut notes = Vec::new();
    let lambda = cand
        .lambda
        .unwrap_or_else(|| (1.0 - norm(cand.p.terminal())).max(0.0));
    let nu = cand
        .nu
        .clone()
        .unwrap_or_else(|| SignedMeasure::zero(cand.grid.len()));
    let bundle = DerivativeBundle::along(inst, &cand.grid, &cand.states, &cand.control);
    let mut checks = BTreeMap::new();
    let mut put = |name: &str, residual: f64, tolerance: f64| {
        checks.insert(
            name.to_string(),
            CheckResult {
                residual,
                tolerance,
                pass: residual <= tolerance,
            },
        );
    };
    let unwrap = |r: Result<f64>, notes: &mut Vec<String>, what: &str| match r {
        Ok(v) => v,
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            f64::INFINITY
        }
    };

    let nontriv = unwrap(check_nontriviality(&cand.p, lambda), &mut notes, "nontriviality");
    put("nontriviality", nontriv, tol.nontriviality);

    let (ode, psi) = check_admissibility(
        inst,
        &cand.grid,
        &cand.states,
        &cand.control,
        &cand.xi,
        cand.xi_cells.as_deref(),
    );
    put("admissibility", ode.max(psi), tol.admissibility);

    let adj = unwrap(
        check_adjoint(inst, &cand.grid, &cand.states, &cand.xi, &cand.p, &nu, &bundle)
            .map(|(c, a)| c.max(a)),
        &mut notes,
        "adjoint",
    );
    put("adjoint", adj, tol.adjoint);

    let (sa, sb) = check_slackness(inst, &cand.states, &cand.xi, &cand.p, cand.band);
    put("slackness_a", sa, tol.slackness_a);
    put("slackness_b", sb, tol.slackness_b);

    let tr = unwrap(
        check_transversality(inst, &cand.states, &cand.p, lambda, tol.endpoint),
        &mut notes,
        "transversality",
    );
    put("transversality", tr, tol.transversality);

    let wm = unwrap(
        check_weak_max(inst, &cand.control, &cand.p, &bundle, tol.prox_eps),
        &mut notes,
        "weak_max",
    );
    put("weak_max", wm, tol.weak_max);

    let sup = check_support(inst, &cand.grid, &cand.states, &nu, cand.band);
    put("support", sup, tol.support);

    let overall_pass = checks.values().all(|c| c.pass);
    CertificateReport {
        checks,
        overall_pass,
        lambda,
        p_terminal: cand.p.terminal().to_vec(),
        nu_atoms: nu.atoms.iter().map(|(i, m)| [cand.grid[*i], *m]).collect(),
        notes,
    }
}

/// Samples a closed-form optimum and its multipliers on `n` cells. Atoms of
/// the measure are placed at the nearest grid node.
pub fn analytic_candidate(
    inst: &ProblemInstance,
    opt: &dyn AnalyticOptimum,
    cells: usize,
) -> Candidate {
    let (ta, tb) = inst.horizon;
    let grid = uniform_grid(ta, tb, cells);
    let states: Vec<Vec<f64>> = grid.iter().map(|&t| opt.state(t)).collect();
    let control = GridControl::from_fn(&grid, inst.m(), |t| opt.control(t));
    let xi = grid.iter().map(|&t| opt.xi(t)).collect();
    let mut values: Vec<Vec<f64>> = grid.iter().map(|&t| opt.adjoint(t)).collect();
    let mut p_atoms = Vec::new();
    let mut nu_atoms = Vec::new();
    for (t, mass) in opt.nu_atoms() {
        let i = grid
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().partial_cmp(&(b.1 - t).abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let left = opt.adjoint_left(t);
        let right = opt.adjoint(t);
        values[i] = right.clone();
        let jump: Vec<f64> = right.iter().zip(&left).map(|(a, b)| a - b).collect();
        p_atoms.push((i, jump));
        nu_atoms.push((i, mass));
    }
    Candidate {
        p: BVPath {
            grid: grid.clone(),
            values,
            atoms: p_atoms,
        },
        nu: Some(SignedMeasure {
            density: grid.iter().map(|&t| opt.nu_density(t)).collect(),
            atoms: nu_atoms,
        }),
        lambda: Some(opt.lambda()),
        band: inst.geometry.bdry_tol,
        grid,
        states,
        control,
        xi,
        xi_cells: None,
    }
}
