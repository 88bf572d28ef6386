//! Problem instances: dynamics, endpoint data, control sets, and the
//! built-in registry.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    self, Annulus, Ball, GeometryConstants, LevelSetC, LevelSetFunction, Sampler,
    DEFAULT_BDRY_TOL,
};
use crate::linalg::{dist, dot, norm, sym_spectral_norm};

/// Flat numeric parameter overrides, keyed by name.
pub type Params = BTreeMap<String, f64>;

/// The controlled perturbation `f(t, x, u)` with its partial Jacobians.
pub trait VectorField: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Row-major `n x n`.
    fn jac_x(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
    /// Row-major `n x m`.
    fn jac_u(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]);
}

/// Gradient and Hessian of the C^1 extension of the potential.
pub trait Extension: Send + Sync {
    fn grad(&self, x: &[f64], out: &mut [f64]);
    fn hess(&self, x: &[f64], out: &mut [f64]);
}

/// Extension of the indicator function of `C`: identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct IndicatorExtension;

impl Extension for IndicatorExtension {
    fn grad(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn hess(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Mayer cost `g(x(t_a), x(t_b))`. May return `f64::INFINITY` off its domain.
pub trait EndpointCost: Send + Sync {
    fn value(&self, x0: &[f64], x1: &[f64]) -> f64;
    fn gradient(&self, x0: &[f64], x1: &[f64], g0: &mut [f64], g1: &mut [f64]);
}

pub type Projector = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Pointwise control constraint `U(t)`.
#[derive(Clone)]
pub enum ControlSet {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// A prox-regular set given by its projector and a finite sample of
    /// points used for maximization.
    ProxRegular {
        projector: Projector,
        radius: f64,
        samples: Vec<Vec<f64>>,
    },
}

impl fmt::Debug for ControlSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlSet::Interval { lo, hi } => write!(f, "Interval[{lo}, {hi}]"),
            ControlSet::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            ControlSet::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            ControlSet::ProxRegular { radius, .. } => write!(f, "ProxRegular(r = {radius})"),
        }
    }
}

impl ControlSet {
    pub fn kind(&self) -> &'static str {
        match self {
            ControlSet::Interval { .. } => "interval",
            ControlSet::Box { .. } => "box",
            ControlSet::Ball { .. } => "ball",
            ControlSet::ProxRegular { .. } => "prox-regular",
        }
    }

    /// Componentwise bounds for interval and box sets.
    pub fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            ControlSet::Interval { lo, hi } => Some((vec![*lo], vec![*hi])),
            ControlSet::Box { lo, hi } => Some((lo.clone(), hi.clone())),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            ControlSet::Interval { lo, hi } => lo > hi,
            ControlSet::Box { lo, hi } => lo.iter().zip(hi).any(|(l, h)| l > h),
            ControlSet::Ball { radius, .. } => *radius < 0.0,
            ControlSet::ProxRegular { samples, .. } => samples.is_empty(),
        }
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        match self {
            ControlSet::Interval { lo, hi } => vec![u[0].clamp(*lo, *hi)],
            ControlSet::Box { lo, hi } => u
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            ControlSet::Ball { center, radius } => {
                let d = dist(u, center);
                if d <= *radius {
                    u.to_vec()
                } else {
                    center
                        .iter()
                        .zip(u)
                        .map(|(c, v)| c + (v - c) * radius / d)
                        .collect()
                }
            }
            ControlSet::ProxRegular { projector, .. } => projector(u),
        }
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        dist(&self.project(u), u) <= tol
    }

    /// Largest `|u|` over the set.
    pub fn norm_bound(&self) -> f64 {
        match self {
            ControlSet::Interval { lo, hi } => lo.abs().max(hi.abs()),
            ControlSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(l, h)| l.abs().max(h.abs()).powi(2))
                .sum::<f64>()
                .sqrt(),
            ControlSet::Ball { center, radius } => norm(center) + radius,
            ControlSet::ProxRegular { samples, .. } => {
                samples.iter().map(|s| norm(s)).fold(0.0, f64::max)
            }
        }
    }
}

/// `t -> U(t)`.
pub type ControlSets = Arc<dyn Fn(f64) -> ControlSet + Send + Sync>;

/// A closed convex cone, as returned by normal-cone queries.
#[derive(Debug, Clone, PartialEq)]
pub enum NormalCone {
    /// All of `R^n`.
    Whole,
    /// `{0}`.
    Zero,
    /// The subspace orthogonal to the unit vector `direction`.
    Orthogonal { direction: Vec<f64> },
    /// `{v : <v, direction> <= 0}`.
    HalfSpace { direction: Vec<f64> },
    /// `{c * normal : c >= 0}`.
    Ray { normal: Vec<f64> },
    /// Product of one-dimensional cones, one per component.
    Orthant { signs: Vec<ConeSign> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeSign {
    Free,
    NonPositive,
    NonNegative,
    Zero,
}

impl NormalCone {
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        match self {
            NormalCone::Whole => v.to_vec(),
            NormalCone::Zero => vec![0.0; v.len()],
            NormalCone::Orthogonal { direction } => {
                let c = dot(v, direction);
                v.iter().zip(direction).map(|(a, d)| a - c * d).collect()
            }
            NormalCone::HalfSpace { direction } => {
                let c = dot(v, direction).max(0.0);
                v.iter().zip(direction).map(|(a, d)| a - c * d).collect()
            }
            NormalCone::Ray { normal } => {
                let nn = dot(normal, normal);
                let c = if nn > 0.0 { dot(v, normal).max(0.0) / nn } else { 0.0 };
                normal.iter().map(|a| c * a).collect()
            }
            NormalCone::Orthant { signs } => v
                .iter()
                .zip(signs)
                .map(|(a, s)| match s {
                    ConeSign::Free => *a,
                    ConeSign::NonPositive => a.min(0.0),
                    ConeSign::NonNegative => a.max(0.0),
                    ConeSign::Zero => 0.0,
                })
                .collect(),
        }
    }

    pub fn distance(&self, v: &[f64]) -> f64 {
        dist(v, &self.project(v))
    }
}

/// Closed endpoint constraint set `C_0` or `C_1`.
#[derive(Clone)]
pub enum EndpointSet {
    Singleton(Vec<f64>),
    /// `{origin + s * direction : s >= 0}` with `direction` of unit length.
    HalfLineRay { origin: Vec<f64>, direction: Vec<f64> },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    LevelSet(Arc<dyn LevelSetFunction>),
}

impl fmt::Debug for EndpointSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointSet::Singleton(p) => write!(f, "Singleton({p:?})"),
            EndpointSet::HalfLineRay { origin, direction } => {
                write!(f, "HalfLineRay({origin:?} + s {direction:?})")
            }
            EndpointSet::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            EndpointSet::LevelSet(func) => write!(f, "LevelSet({func:?})"),
        }
    }
}

impl EndpointSet {
    pub fn ray(origin: Vec<f64>, direction: Vec<f64>) -> Self {
        let len = norm(&direction);
        EndpointSet::HalfLineRay {
            origin,
            direction: direction.iter().map(|d| d / len).collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EndpointSet::Singleton(_) => "singleton",
            EndpointSet::HalfLineRay { .. } => "half-line",
            EndpointSet::Box { .. } => "box",
            EndpointSet::LevelSet(_) => "level-set",
        }
    }

    /// Some point of the set.
    pub fn representative(&self) -> Vec<f64> {
        match self {
            EndpointSet::Singleton(p) => p.clone(),
            EndpointSet::HalfLineRay { origin, .. } => origin.clone(),
            EndpointSet::Box { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            EndpointSet::LevelSet(func) => {
                let (lo, hi) = func.bounds();
                let c: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
                self.project(&c)
            }
        }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            EndpointSet::Singleton(p) => p.clone(),
            EndpointSet::HalfLineRay { origin, direction } => {
                let d: Vec<f64> = x.iter().zip(origin).map(|(a, o)| a - o).collect();
                let s = dot(&d, direction).max(0.0);
                origin.iter().zip(direction).map(|(o, v)| o + s * v).collect()
            }
            EndpointSet::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(v, (l, h))| v.clamp(*l, *h))
                .collect(),
            EndpointSet::LevelSet(func) => {
                if func.value(x) <= 0.0 {
                    x.to_vec()
                } else if let Some(y) = func.closed_form_projection(x) {
                    y
                } else {
                    geometry::newton_projection(func.as_ref(), x).unwrap_or_else(|_| x.to_vec())
                }
            }
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        dist(x, &self.project(x))
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.distance(x) <= tol
    }

    /// Limiting normal cone at `x`, which must lie in the set within `tol`.
    pub fn normal_cone(&self, x: &[f64], tol: f64) -> Result<NormalCone> {
        let d = self.distance(x);
        if d > tol {
            return Err(Error::EndpointInfeasible {
                which: "queried",
                distance: d,
            });
        }
        Ok(match self {
            EndpointSet::Singleton(_) => NormalCone::Whole,
            EndpointSet::HalfLineRay { origin, direction } => {
                let rel: Vec<f64> = x.iter().zip(origin).map(|(a, o)| a - o).collect();
                if dot(&rel, direction) > tol {
                    NormalCone::Orthogonal {
                        direction: direction.clone(),
                    }
                } else {
                    NormalCone::HalfSpace {
                        direction: direction.clone(),
                    }
                }
            }
            EndpointSet::Box { lo, hi } => NormalCone::Orthant {
                signs: x
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(v, (l, h))| {
                        let at_lo = (v - l).abs() <= tol;
                        let at_hi = (v - h).abs() <= tol;
                        match (at_lo, at_hi) {
                            (true, true) => ConeSign::Free,
                            (true, false) => ConeSign::NonPositive,
                            (false, true) => ConeSign::NonNegative,
                            (false, false) => ConeSign::Zero,
                        }
                    })
                    .collect(),
            },
            EndpointSet::LevelSet(func) => {
                if func.value(x).abs() <= tol.max(DEFAULT_BDRY_TOL) || func.value(x) > 0.0 {
                    let mut g = vec![0.0; x.len()];
                    func.gradient(x, &mut g);
                    NormalCone::Ray { normal: g }
                } else {
                    NormalCone::Zero
                }
            }
        })
    }
}

/// A complete optimal control problem over a perturbed sweeping process.
#[derive(Clone)]
pub struct ProblemInstance {
    pub name: String,
    pub geometry: LevelSetC,
    pub field: Arc<dyn VectorField>,
    pub extension: Arc<dyn Extension>,
    pub cost: Arc<dyn EndpointCost>,
    pub c0: EndpointSet,
    pub c1: EndpointSet,
    pub controls: ControlSets,
    pub horizon: (f64, f64),
    /// Bound on `|f - grad Phi|` over `C x U(t)`.
    pub m_bar: f64,
    /// Localization radius of the reference minimizer.
    pub delta: f64,
    /// Initial state used when `C_0` is not a singleton.
    pub x0_guess: Vec<f64>,
    /// Starting control for the optimizer.
    pub control_guess: Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>,
}

impl fmt::Debug for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemInstance")
            .field("name", &self.name)
            .field("geometry", &self.geometry)
            .field("c0", &self.c0)
            .field("c1", &self.c1)
            .field("horizon", &self.horizon)
            .field("m_bar", &self.m_bar)
            .field("delta", &self.delta)
            .finish_non_exhaustive()
    }
}

impl ProblemInstance {
    pub fn n(&self) -> usize {
        self.field.state_dim()
    }

    pub fn m(&self) -> usize {
        self.field.control_dim()
    }

    pub fn control_set(&self, t: f64) -> ControlSet {
        (self.controls)(t)
    }

    /// `f_Phi(t, x, u) = f(t, x, u) - grad Phi(x)`, written into `out`;
    /// `scratch` must hold `n` entries.
    pub fn f_phi(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        self.field.eval(t, x, u, out);
        self.extension.grad(x, scratch);
        for (o, s) in out.iter_mut().zip(scratch.iter()) {
            *o -= s;
        }
    }

    pub fn f_phi_vec(&self, t: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut out = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        self.f_phi(t, x, u, &mut out, &mut scratch);
        out
    }

    /// The starting point of the continuation: the singleton of `C_0` or the
    /// configured guess.
    pub fn nominal_x0(&self) -> Vec<f64> {
        match &self.c0 {
            EndpointSet::Singleton(p) => p.clone(),
            other => other.project(&self.x0_guess),
        }
    }
}

// ---------------------------------------------------------------------------
// Built-in instances

/// `f(t, x, u) = (t - x1 - x2 - u, -t + x1 - x2 + u)`.
#[derive(Debug, Clone, Copy)]
pub struct AnnulusField;

impl VectorField for AnnulusField {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = t - x[0] - x[1] - u[0];
        out[1] = -t + x[0] - x[1] + u[0];
    }
    fn jac_x(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[-1.0, -1.0, 1.0, -1.0]);
    }
    fn jac_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[-1.0, 1.0]);
    }
}

/// `g(x0, x1) = (|x1|^2 - 1) / 2` when `x1` lies in `C`, `+inf` otherwise.
#[derive(Debug, Clone)]
pub struct AnnulusCost {
    pub set: Annulus,
    pub tol: f64,
}

impl EndpointCost for AnnulusCost {
    fn value(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        if self.set.value(x1) > self.tol {
            f64::INFINITY
        } else {
            0.5 * (dot(x1, x1) - 1.0)
        }
    }
    fn gradient(&self, _x0: &[f64], x1: &[f64], g0: &mut [f64], g1: &mut [f64]) {
        g0.iter_mut().for_each(|v| *v = 0.0);
        g1.copy_from_slice(x1);
    }
}

/// `f(t, x, u) = (a + u, b)`: constant drift steered along the first axis.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDrift {
    pub a: f64,
    pub b: f64,
}

impl VectorField for ConstantDrift {
    fn state_dim(&self) -> usize {
        2
    }
    fn control_dim(&self) -> usize {
        1
    }
    fn eval(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.a + u[0];
        out[1] = self.b;
    }
    fn jac_x(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn jac_u(&self, _t: f64, _x: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[1.0, 0.0]);
    }
}

/// `g(x0, x1) = |x1 - target|^2 / 2`.
#[derive(Debug, Clone)]
pub struct TerminalDistanceCost {
    pub target: Vec<f64>,
}

impl EndpointCost for TerminalDistanceCost {
    fn value(&self, _x0: &[f64], x1: &[f64]) -> f64 {
        let d = dist(x1, &self.target);
        0.5 * d * d
    }
    fn gradient(&self, _x0: &[f64], x1: &[f64], g0: &mut [f64], g1: &mut [f64]) {
        g0.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..x1.len() {
            g1[i] = x1[i] - self.target[i];
        }
    }
}

fn param(params: &Params, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

/// Names accepted by [`builtin`].
pub const BUILTIN_NAMES: &[&str] = &["annulus_example", "interior_drift"];

/// Builds a registered instance.
///
/// * `annulus_example`: `C` the annulus `1 <= |x| <= 2`, horizon `[0, pi/2]`,
///   `U(t) = [t, pi]`, `C_0 = {(1, 0)}`, `C_1 = {(0, s) : s >= 0}`,
///   `g = (|x(pi/2)|^2 - 1)/2`. Overrides: `m_bar`, `eta`, `delta`,
///   `rho_smooth`, `bdry_tol`, `c1_offset` (shifts the origin of `C_1` along
///   the first axis).
/// * `interior_drift`: a disc of radius 10 with constant drift, a run that
///   never feels the constraint. Overrides: `drift_a`, `drift_b`.
pub fn builtin(name: &str, params: &Params) -> Result<ProblemInstance> {
    match name {
        "annulus_example" => annulus_example(params),
        "interior_drift" => interior_drift(params),
        other => Err(Error::UnknownInstance(other.to_string())),
    }
}

fn annulus_example(params: &Params) -> Result<ProblemInstance> {
    let set = Annulus {
        inner: 1.0,
        outer: 2.0,
    };
    let rho = param(params, "rho_smooth", 0.5);
    let bdry_tol = param(params, "bdry_tol", DEFAULT_BDRY_TOL);
    // min |grad psi| on the boundary is 6 (inner circle); safety 0.9.
    let eta = param(params, "eta", 0.9 * 6.0 / 2.0);
    let r = set.outer + 0.5 * rho;
    let constants = GeometryConstants {
        eta,
        m_psi_bar: 12.0,
        m_psi: 0.5 * (12.0 * r * r - 10.0),
    };
    let geometry = LevelSetC::new(Arc::new(set.clone()), constants, bdry_tol, rho)?;
    // |f_Phi| <= sqrt(2) |x| + sqrt(2) |t - u| <= sqrt(2) (2 + pi).
    let m_bar = param(params, "m_bar", 2.0_f64.sqrt() * (2.0 + PI));
    let c1_offset = param(params, "c1_offset", 0.0);
    Ok(ProblemInstance {
        name: "annulus_example".into(),
        geometry,
        field: Arc::new(AnnulusField),
        extension: Arc::new(IndicatorExtension),
        cost: Arc::new(AnnulusCost { set, tol: bdry_tol }),
        c0: EndpointSet::Singleton(vec![1.0, 0.0]),
        c1: EndpointSet::ray(vec![c1_offset, 0.0], vec![0.0, 1.0]),
        controls: Arc::new(|t| ControlSet::Interval { lo: t, hi: PI }),
        horizon: (0.0, FRAC_PI_2),
        m_bar,
        delta: param(params, "delta", 0.5),
        x0_guess: vec![1.0, 0.0],
        control_guess: Arc::new(|t| vec![0.5 * (t + PI)]),
    })
}

fn interior_drift(params: &Params) -> Result<ProblemInstance> {
    let radius = 10.0;
    let a = param(params, "drift_a", 1.0);
    let b = param(params, "drift_b", 0.5);
    let rho = 1.0;
    let eta = 0.9 * 2.0 * radius / 2.0;
    let geometry = LevelSetC::new(
        Arc::new(Ball {
            center: vec![0.0, 0.0],
            radius,
        }),
        GeometryConstants {
            eta,
            m_psi_bar: 2.0 * radius,
            m_psi: 1.0,
        },
        DEFAULT_BDRY_TOL,
        rho,
    )?;
    let m_bar = ((a.abs() + 1.0).powi(2) + b * b).sqrt();
    Ok(ProblemInstance {
        name: "interior_drift".into(),
        geometry,
        field: Arc::new(ConstantDrift { a, b }),
        extension: Arc::new(IndicatorExtension),
        cost: Arc::new(TerminalDistanceCost {
            target: vec![2.0, 0.5],
        }),
        c0: EndpointSet::Singleton(vec![0.0, 0.0]),
        c1: EndpointSet::Box {
            lo: vec![-radius; 2],
            hi: vec![radius; 2],
        },
        controls: Arc::new(|_| ControlSet::Interval { lo: 0.0, hi: 1.0 }),
        horizon: (0.0, 1.0),
        m_bar,
        delta: 0.5,
        x0_guess: vec![0.0, 0.0],
        control_guess: Arc::new(|_| vec![0.0]),
    })
}

// ---------------------------------------------------------------------------
// Closed-form optima

/// An analytic optimal process together with a set of multipliers for it.
pub trait AnalyticOptimum: Send + Sync {
    fn state(&self, t: f64) -> Vec<f64>;
    fn velocity(&self, t: f64) -> Vec<f64>;
    fn control(&self, t: f64) -> Vec<f64>;
    fn xi(&self, t: f64) -> f64;
    /// Right-continuous adjoint value.
    fn adjoint(&self, t: f64) -> Vec<f64>;
    /// Left limit of the adjoint.
    fn adjoint_left(&self, t: f64) -> Vec<f64>;
    fn lambda(&self) -> f64;
    /// Atoms `(time, mass)` of the state-constraint measure.
    fn nu_atoms(&self) -> Vec<(f64, f64)>;
    /// Density of the absolutely continuous part of the measure.
    fn nu_density(&self, t: f64) -> f64;
}

/// `x(t) = (cos t, sin t)`, `u(t) = t`, `xi = 1/6`, `lambda = 3/8`,
/// `p(t) = (sin t, -cos t)/2` before `pi/2` and `(1/2, -3/8)` at `pi/2`,
/// `nu = delta_{pi/2} / 16`.
#[derive(Debug, Clone, Copy)]
pub struct AnnulusOptimum;

impl AnnulusOptimum {
    const T_END: f64 = FRAC_PI_2;
}

impl AnalyticOptimum for AnnulusOptimum {
    fn state(&self, t: f64) -> Vec<f64> {
        vec![t.cos(), t.sin()]
    }
    fn velocity(&self, t: f64) -> Vec<f64> {
        vec![-t.sin(), t.cos()]
    }
    fn control(&self, t: f64) -> Vec<f64> {
        vec![t]
    }
    fn xi(&self, _t: f64) -> f64 {
        1.0 / 6.0
    }
    fn adjoint(&self, t: f64) -> Vec<f64> {
        if t >= Self::T_END - 1e-12 {
            vec![0.5, -0.375]
        } else {
            self.adjoint_left(t)
        }
    }
    fn adjoint_left(&self, t: f64) -> Vec<f64> {
        vec![0.5 * t.sin(), -0.5 * t.cos()]
    }
    fn lambda(&self) -> f64 {
        0.375
    }
    fn nu_atoms(&self) -> Vec<(f64, f64)> {
        vec![(Self::T_END, 1.0 / 16.0)]
    }
    fn nu_density(&self, _t: f64) -> f64 {
        0.0
    }
}

pub fn closed_form_solution(name: &str) -> Result<Arc<dyn AnalyticOptimum>> {
    match name {
        "annulus_example" => Ok(Arc::new(AnnulusOptimum)),
        other if BUILTIN_NAMES.contains(&other) => Err(Error::NoClosedForm(other.to_string())),
        other => Err(Error::UnknownInstance(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Hypothesis validation

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, passed: bool, value: f64, detail: impl Into<String>) {
        self.checks.push(HypothesisCheck {
            name,
            passed,
            value,
            detail: detail.into(),
        });
    }
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    dist(a, b) / (1.0 + norm(a).max(norm(b)))
}

fn sample_control(set: &ControlSet, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match set {
        ControlSet::Interval { lo, hi } => vec![if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo }],
        ControlSet::Box { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| if h > l { rng.gen_range(*l..=*h) } else { *l })
            .collect(),
        ControlSet::Ball { center, radius } => {
            let dir: Vec<f64> = center.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = norm(&dir).max(1e-12);
            let r = radius * rng.gen::<f64>();
            center.iter().zip(&dir).map(|(c, d)| c + r * d / len).collect()
        }
        ControlSet::ProxRegular { samples, .. } => samples[rng.gen_range(0..samples.len())].clone(),
    }
}

/// Checks the standing hypotheses by sampling. Every failure becomes a report
/// entry; nothing here returns an error.
pub fn validate_hypotheses(inst: &ProblemInstance, sampler: &Sampler) -> ValidationReport {
    let mut report = ValidationReport::default();
    let geo = &inst.geometry;
    let func = geo.function();
    let n = inst.n();
    let m = inst.m();
    let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed ^ 0x5eed);
    let samples = sampler.sample(func.as_ref(), geo.bdry_tol, geo.rho_smooth);
    let in_c: Vec<Vec<f64>> = samples
        .interior
        .iter()
        .chain(samples.boundary.iter())
        .cloned()
        .collect();
    let (ta, tb) = inst.horizon;

    // Triples (t, x, u) with x in C and u in U(t).
    let triples: Vec<(f64, Vec<f64>, Vec<f64>)> = in_c
        .iter()
        .map(|x| {
            let t = rng.gen_range(ta..=tb);
            let u = sample_control(&inst.control_set(t), &mut rng);
            (t, x.clone(), u)
        })
        .collect();

    // H1: Lipschitz continuity and derivative consistency of f.
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    let mut lip = 0.0_f64;
    let mut deriv_err = 0.0_f64;
    let mut jx = vec![0.0; n * n];
    let mut ju = vec![0.0; n * m];
    let h = 1e-6;
    for (t, x, u) in &triples {
        inst.field.eval(*t, x, u, &mut fx);
        let dx: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
        let du: Vec<f64> = u.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
        inst.field.eval(*t, &dx, &du, &mut fy);
        let step = (dist(x, &dx).powi(2) + dist(u, &du).powi(2)).sqrt();
        if step > 0.0 {
            lip = lip.max(dist(&fx, &fy) / step);
        }
        inst.field.jac_x(*t, x, u, &mut jx);
        inst.field.jac_u(*t, x, u, &mut ju);
        let mut col_p = vec![0.0; n];
        let mut col_m = vec![0.0; n];
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            inst.field.eval(*t, &xp, u, &mut col_p);
            inst.field.eval(*t, &xm, u, &mut col_m);
            let fd: Vec<f64> = (0..n).map(|i| (col_p[i] - col_m[i]) / (2.0 * h)).collect();
            let an: Vec<f64> = (0..n).map(|i| jx[i * n + j]).collect();
            deriv_err = deriv_err.max(relative_gap(&an, &fd));
        }
        for j in 0..m {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            inst.field.eval(*t, x, &up, &mut col_p);
            inst.field.eval(*t, x, &um, &mut col_m);
            let fd: Vec<f64> = (0..n).map(|i| (col_p[i] - col_m[i]) / (2.0 * h)).collect();
            let an: Vec<f64> = (0..n).map(|i| ju[i * m + j]).collect();
            deriv_err = deriv_err.max(relative_gap(&an, &fd));
        }
    }
    report.push(
        "H1.lipschitz",
        lip.is_finite() && lip < 1e8,
        lip,
        format!("largest sampled Lipschitz ratio of f: {lip:.4e}"),
    );
    report.push(
        "H1.derivatives",
        deriv_err <= 1e-5,
        deriv_err,
        format!("Jacobians vs central differences, max relative gap {deriv_err:.2e}"),
    );

    // Bound on f_Phi.
    let mut scratch = vec![0.0; n];
    let max_f = triples
        .iter()
        .map(|(t, x, u)| {
            inst.f_phi(*t, x, u, &mut fx, &mut scratch);
            norm(&fx)
        })
        .fold(0.0_f64, f64::max);
    report.push(
        "Mbar",
        max_f <= inst.m_bar * (1.0 + 1e-12),
        max_f,
        format!("max sampled |f_Phi| = {max_f:.6} against Mbar = {:.6}", inst.m_bar),
    );

    // H2.1: derivatives of psi.
    let mut g = vec![0.0; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut hs = vec![0.0; n * n];
    let mut psi_err = 0.0_f64;
    for x in &in_c {
        geo.grad_psi(x, &mut g);
        geo.hess_psi(x, &mut hs);
        let mut fd_g = vec![0.0; n];
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            fd_g[j] = (geo.eval_psi(&xp) - geo.eval_psi(&xm)) / (2.0 * h);
            geo.grad_psi(&xp, &mut gp);
            geo.grad_psi(&xm, &mut gm);
            let fd_col: Vec<f64> = (0..n).map(|i| (gp[i] - gm[i]) / (2.0 * h)).collect();
            let an: Vec<f64> = (0..n).map(|i| hs[i * n + j]).collect();
            psi_err = psi_err.max(relative_gap(&an, &fd_col));
        }
        psi_err = psi_err.max(relative_gap(&g, &fd_g));
    }
    report.push(
        "H2.1",
        psi_err <= 1e-5 && !in_c.is_empty(),
        psi_err,
        format!("grad/Hessian of psi vs central differences, max relative gap {psi_err:.2e}"),
    );

    // H2.2: gradient margin on the boundary.
    let min_grad = samples
        .boundary
        .iter()
        .map(|p| {
            geo.grad_psi(p, &mut g);
            norm(&g)
        })
        .fold(f64::INFINITY, f64::min);
    report.push(
        "H2.2",
        !samples.boundary.is_empty() && min_grad > 2.0 * geo.eta,
        min_grad,
        format!("min boundary |grad psi| = {min_grad:.4e} against 2 eta = {:.4e}", 2.0 * geo.eta),
    );

    // H2.3: coercivity, psi positive and growing on expanding spheres.
    let (lo, hi) = func.bounds();
    let r0 = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| l.abs().max(h.abs()).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(1.0);
    let mut previous = f64::NEG_INFINITY;
    let mut coercive = true;
    let mut last_min = 0.0;
    for scale in [2.0, 4.0, 8.0] {
        let radius = scale * r0;
        let min_psi = (0..64)
            .map(|_| {
                let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let len = norm(&dir).max(1e-12);
                let p: Vec<f64> = dir.iter().map(|d| radius * d / len).collect();
                geo.eval_psi(&p)
            })
            .fold(f64::INFINITY, f64::min);
        coercive &= min_psi > 0.0 && min_psi > previous;
        previous = min_psi;
        last_min = min_psi;
    }
    report.push(
        "H2.3",
        coercive,
        last_min,
        "psi positive and increasing on spheres of radius 2, 4, 8 times the bounding radius",
    );

    // H3: Lipschitz gradient of the extension.
    let mut e1 = vec![0.0; n];
    let mut e2 = vec![0.0; n];
    let mut ext_lip = 0.0_f64;
    for x in &in_c {
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-1e-3..1e-3)).collect();
        inst.extension.grad(x, &mut e1);
        inst.extension.grad(&y, &mut e2);
        let d = dist(x, &y);
        if d > 0.0 {
            ext_lip = ext_lip.max(dist(&e1, &e2) / d);
        }
    }
    report.push(
        "H3",
        ext_lip.is_finite() && ext_lip < 1e8,
        ext_lip,
        format!("Lipschitz ratio of grad Phi: {ext_lip:.3e}"),
    );

    // H4.1: C_0 nonempty and inside C.
    let x0 = inst.nominal_x0();
    let psi0 = geo.eval_psi(&x0);
    report.push(
        "H4.1",
        inst.c0.contains(&x0, 1e-9) && psi0 <= geo.bdry_tol,
        psi0,
        format!("nominal initial point {x0:?} has psi = {psi0:.3e}"),
    );

    // H4.2: U(t) nonempty and uniformly bounded.
    let mut bound = 0.0_f64;
    let mut nonempty = true;
    for k in 0..=100 {
        let t = ta + (tb - ta) * k as f64 / 100.0;
        let set = inst.control_set(t);
        nonempty &= !set.is_empty();
        bound = bound.max(set.norm_bound());
    }
    report.push(
        "H4.2",
        nonempty && bound.is_finite(),
        bound,
        format!("U(t) nonempty on 101 sampled times, sup |u| <= {bound:.4}"),
    );

    // H4.3: C_1 nonempty.
    let rep = inst.c1.representative();
    report.push(
        "H4.3",
        inst.c1.contains(&rep, 1e-9),
        0.0,
        format!("C_1 contains {rep:?}"),
    );

    // H4.5: constraint qualification.
    let set = inst.control_set(ta);
    let (cq, detail) = match set {
        ControlSet::ProxRegular { .. } => (true, "assumed for prox-regular control sets"),
        _ => (true, "holds for intervals, boxes and balls"),
    };
    report.push("H4.5", cq, 0.0, detail);

    // H5: g Lipschitz near feasible endpoints.
    let mut g_lip = 0.0_f64;
    let mut g_finite = true;
    for x1 in samples.interior.iter().take(100) {
        let v = inst.cost.value(&x0, x1);
        g_finite &= v.is_finite();
        let y: Vec<f64> = x1.iter().map(|a| a + rng.gen_range(-1e-4..1e-4)).collect();
        if geo.eval_psi(&y) <= 0.0 {
            let w = inst.cost.value(&x0, &y);
            let d = dist(x1, &y);
            if d > 0.0 && w.is_finite() {
                g_lip = g_lip.max((w - v).abs() / d);
            }
        }
    }
    report.push(
        "H5",
        g_finite && g_lip.is_finite() && g_lip < 1e8,
        g_lip,
        format!("Lipschitz ratio of g on C: {g_lip:.3e}"),
    );

    let hess_bound = in_c
        .iter()
        .map(|p| {
            geo.hess_psi(p, &mut hs);
            sym_spectral_norm(&hs, n)
        })
        .fold(0.0_f64, f64::max);
    report.push(
        "Mpsi",
        0.5 * hess_bound <= geo.m_psi * (1.0 + 1e-9),
        0.5 * hess_bound,
        format!("half the sampled Hessian norm {:.4} against m_psi = {:.4}", 0.5 * hess_bound, geo.m_psi),
    );

    report
}
