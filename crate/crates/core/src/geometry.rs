//! The constraint set `C = {x : psi(x) <= 0}`.
//!
//! [`LevelSetC`] wraps a [`LevelSetFunction`] together with the constants the
//! penalty scheme depends on: the boundary gradient margin `eta`, the bound
//! `m_psi_bar` on `|grad psi|` over `C`, and the curvature constant `m_psi`
//! (half the Lipschitz constant of `grad psi` near `C`).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dist, dot, norm, sym_spectral_norm};

/// Default half-width of the numerical boundary band.
pub const DEFAULT_BDRY_TOL: f64 = 1e-8;

/// A twice differentiable function whose zero sublevel set is compact.
pub trait LevelSetFunction: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `n x n` Hessian.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
    /// An axis-aligned box containing the sublevel set.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);

    /// Exact nearest-point map, when one is known.
    fn closed_form_projection(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Radius of the tube around `C` on which projections are unique, when
    /// known in closed form. `None` falls back to `eta / m_psi`.
    fn projection_radius(&self) -> Option<f64> {
        None
    }
}

/// `psi(x) = (|x|^2 - a^2)(|x|^2 - b^2)`, the closed annulus `a <= |x| <= b`.
#[derive(Debug, Clone)]
pub struct Annulus {
    pub inner: f64,
    pub outer: f64,
}

impl LevelSetFunction for Annulus {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let s = dot(x, x);
        (s - self.inner * self.inner) * (s - self.outer * self.outer)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = dot(x, x);
        let c = 2.0 * (2.0 * s - self.inner * self.inner - self.outer * self.outer);
        out[0] = c * x[0];
        out[1] = c * x[1];
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let s = dot(x, x);
        let c = 2.0 * (2.0 * s - self.inner * self.inner - self.outer * self.outer);
        out[0] = c + 8.0 * x[0] * x[0];
        out[1] = 8.0 * x[0] * x[1];
        out[2] = out[1];
        out[3] = c + 8.0 * x[1] * x[1];
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![-self.outer; 2], vec![self.outer; 2])
    }

    fn closed_form_projection(&self, x: &[f64]) -> Option<Vec<f64>> {
        let r = norm(x);
        if r < self.inner {
            if r == 0.0 {
                return Some(vec![self.inner, 0.0]);
            }
            let k = self.inner / r;
            Some(vec![x[0] * k, x[1] * k])
        } else if r > self.outer {
            let k = self.outer / r;
            Some(vec![x[0] * k, x[1] * k])
        } else {
            Some(x.to_vec())
        }
    }

    fn projection_radius(&self) -> Option<f64> {
        Some(self.inner)
    }
}

/// `psi(x) = |x - c|^2 - R^2`. With `R = 0` the set collapses to a point and
/// the boundary gradient vanishes.
#[derive(Debug, Clone)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl LevelSetFunction for Ball {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = dist(x, &self.center);
        d * d - self.radius * self.radius
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = 2.0 * (x[i] - self.center[i]);
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out[..n * n].iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            out[i * n + i] = 2.0;
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let lo = self.center.iter().map(|c| c - self.radius).collect();
        let hi = self.center.iter().map(|c| c + self.radius).collect();
        (lo, hi)
    }

    fn closed_form_projection(&self, x: &[f64]) -> Option<Vec<f64>> {
        let d = dist(x, &self.center);
        if d <= self.radius {
            return Some(x.to_vec());
        }
        let k = self.radius / d;
        Some(
            x.iter()
                .zip(&self.center)
                .map(|(xi, ci)| ci + (xi - ci) * k)
                .collect(),
        )
    }

    fn projection_radius(&self) -> Option<f64> {
        Some(f64::INFINITY)
    }
}

/// `psi(x) = sum (x_i / a_i)^2 - 1`. No closed-form projection, so it
/// exercises the Newton projector.
#[derive(Debug, Clone)]
pub struct Ellipsoid {
    pub semi_axes: Vec<f64>,
}

impl LevelSetFunction for Ellipsoid {
    fn dim(&self) -> usize {
        self.semi_axes.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.semi_axes)
            .map(|(xi, a)| (xi / a) * (xi / a))
            .sum::<f64>()
            - 1.0
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (i, a) in self.semi_axes.iter().enumerate() {
            out[i] = 2.0 * x[i] / (a * a);
        }
    }

    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        out[..n * n].iter_mut().for_each(|v| *v = 0.0);
        for (i, a) in self.semi_axes.iter().enumerate() {
            out[i * n + i] = 2.0 / (a * a);
        }
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (
            self.semi_axes.iter().map(|a| -a).collect(),
            self.semi_axes.clone(),
        )
    }

    fn projection_radius(&self) -> Option<f64> {
        Some(f64::INFINITY)
    }
}

/// Position of a point relative to `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    DeepInterior,
    BoundaryBand,
    Outside,
}

/// Constants attached to `C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConstants {
    pub eta: f64,
    pub m_psi_bar: f64,
    pub m_psi: f64,
}

#[derive(Clone)]
pub struct LevelSetC {
    func: Arc<dyn LevelSetFunction>,
    pub eta: f64,
    pub m_psi_bar: f64,
    pub m_psi: f64,
    pub bdry_tol: f64,
    pub rho_smooth: f64,
}

impl fmt::Debug for LevelSetC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelSetC")
            .field("func", &self.func)
            .field("eta", &self.eta)
            .field("m_psi_bar", &self.m_psi_bar)
            .field("m_psi", &self.m_psi)
            .field("bdry_tol", &self.bdry_tol)
            .field("rho_smooth", &self.rho_smooth)
            .finish()
    }
}

impl LevelSetC {
    /// `m_psi` is raised to `4 eta / rho_smooth` when smaller.
    pub fn new(
        func: Arc<dyn LevelSetFunction>,
        constants: GeometryConstants,
        bdry_tol: f64,
        rho_smooth: f64,
    ) -> Result<Self> {
        let GeometryConstants {
            eta,
            m_psi_bar,
            m_psi,
        } = constants;
        if !(eta > 0.0) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(rho_smooth > 0.0) || !(bdry_tol >= 0.0) || !(m_psi_bar > 0.0) {
            return Err(Error::InvalidParameter(
                "rho_smooth and m_psi_bar must be positive, bdry_tol nonnegative".into(),
            ));
        }
        Ok(Self {
            func,
            eta,
            m_psi_bar,
            m_psi: m_psi.max(4.0 * eta / rho_smooth),
            bdry_tol,
            rho_smooth,
        })
    }

    pub fn function(&self) -> &Arc<dyn LevelSetFunction> {
        &self.func
    }

    pub fn dim(&self) -> usize {
        self.func.dim()
    }

    #[inline]
    pub fn eval_psi(&self, x: &[f64]) -> f64 {
        self.func.value(x)
    }

    #[inline]
    pub fn grad_psi(&self, x: &[f64], out: &mut [f64]) {
        self.func.gradient(x, out)
    }

    pub fn grad_psi_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.func.gradient(x, &mut g);
        g
    }

    #[inline]
    pub fn hess_psi(&self, x: &[f64], out: &mut [f64]) {
        self.func.hessian(x, out)
    }

    pub fn classify(&self, x: &[f64]) -> Region {
        classify_with_band(self.eval_psi(x), self.bdry_tol)
    }

    /// Radius of the tube on which `project_onto_c` is single valued.
    pub fn prox_radius(&self) -> f64 {
        self.func
            .projection_radius()
            .unwrap_or(self.eta / self.m_psi)
    }

    /// Nearest point of `C`. Uses the closed form when the level-set function
    /// provides one, otherwise damped Newton on the KKT system of
    /// `min |y - x|^2 / 2 s.t. psi(y) = 0`.
    pub fn project_onto_c(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = match self.func.closed_form_projection(x) {
            Some(y) => y,
            None => {
                if self.eval_psi(x) <= 0.0 {
                    return Ok(x.to_vec());
                }
                newton_projection(self.func.as_ref(), x)?
            }
        };
        let d = dist(x, &y);
        let radius = self.prox_radius();
        if d >= radius {
            return Err(Error::OutsideProxRadius {
                distance: d,
                radius,
            });
        }
        Ok(y)
    }
}

pub(crate) fn classify_with_band(psi: f64, band: f64) -> Region {
    if psi > band {
        Region::Outside
    } else if psi.abs() <= band {
        Region::BoundaryBand
    } else {
        Region::DeepInterior
    }
}

/// Moves `y` onto `psi = 0` along the gradient (Newton on the scalar
/// equation). Returns `None` when it fails to converge.
fn pull_to_boundary(func: &dyn LevelSetFunction, mut y: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let n = y.len();
    let mut g = vec![0.0; n];
    for _ in 0..200 {
        let v = func.value(&y);
        if v.abs() <= tol {
            return Some(y);
        }
        func.gradient(&y, &mut g);
        let gg = dot(&g, &g);
        if gg == 0.0 || !gg.is_finite() {
            return None;
        }
        let step = v / gg;
        for i in 0..n {
            y[i] -= step * g[i];
        }
    }
    None
}

pub(crate) fn newton_projection(func: &dyn LevelSetFunction, x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    let fail = |reason: &str| Error::BlowUp {
        t: f64::NAN,
        reason: format!("projection onto C: {reason}"),
    };
    let mut y = pull_to_boundary(func, x.to_vec(), 1e-12).ok_or_else(|| fail("no boundary point"))?;
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];
    func.gradient(&y, &mut g);
    let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
    let mut mu = dot(&diff, &g) / dot(&g, &g);

    let residual = |y: &[f64], mu: f64, g: &mut [f64]| -> (Vec<f64>, f64) {
        func.gradient(y, g);
        let mut r = vec![0.0; n + 1];
        for i in 0..n {
            r[i] = y[i] - x[i] + mu * g[i];
        }
        r[n] = func.value(y);
        let nr = norm(&r);
        (r, nr)
    };

    let (mut r, mut nr) = residual(&y, mu, &mut g);
    for _ in 0..100 {
        if nr <= 1e-13 * (1.0 + norm(x)) {
            return Ok(y);
        }
        func.hessian(&y, &mut h);
        let mut jac = DMatrix::<f64>::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                jac[(i, j)] = mu * h[i * n + j] + if i == j { 1.0 } else { 0.0 };
            }
            jac[(i, n)] = g[i];
            jac[(n, i)] = g[i];
        }
        let rhs = DVector::from_vec(r.iter().map(|v| -v).collect());
        let step = jac.lu().solve(&rhs).ok_or_else(|| fail("singular KKT matrix"))?;
        let mut alpha = 1.0;
        loop {
            let y_trial: Vec<f64> = (0..n).map(|i| y[i] + alpha * step[i]).collect();
            let mu_trial = mu + alpha * step[n];
            let (r_trial, nr_trial) = residual(&y_trial, mu_trial, &mut g);
            if nr_trial < (1.0 - 1e-4 * alpha) * nr || alpha < 1e-10 {
                y = y_trial;
                mu = mu_trial;
                r = r_trial;
                nr = nr_trial;
                break;
            }
            alpha *= 0.5;
        }
    }
    if nr <= 1e-9 * (1.0 + norm(x)) {
        Ok(y)
    } else {
        Err(fail("Newton did not converge"))
    }
}

/// Seeded sampler of points on `bdry C`, in `C`, and in the tube `C + rho/2 B`.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub seed: u64,
    pub n_boundary: usize,
    pub n_interior: usize,
}

impl Default for Sampler {
    fn default() -> Self {
        Self {
            seed: 0,
            n_boundary: 400,
            n_interior: 400,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub boundary: Vec<Vec<f64>>,
    pub interior: Vec<Vec<f64>>,
    pub tube: Vec<Vec<f64>>,
}

impl Sampler {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn sample(&self, func: &dyn LevelSetFunction, bdry_tol: f64, rho: f64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (lo, hi) = func.bounds();
        let n = func.dim();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let pad = 0.2 * (hi[i] - lo[i]).max(1e-3);
                    rng.gen_range((lo[i] - pad)..(hi[i] + pad))
                })
                .collect()
        };

        let mut boundary = Vec::with_capacity(self.n_boundary);
        let mut tries = 0;
        while boundary.len() < self.n_boundary && tries < 20 * self.n_boundary.max(1) {
            tries += 1;
            if let Some(p) = pull_to_boundary(func, draw(&mut rng), bdry_tol.max(1e-14)) {
                boundary.push(p);
            }
        }

        let mut interior = Vec::with_capacity(self.n_interior);
        tries = 0;
        while interior.len() < self.n_interior && tries < 50 * self.n_interior.max(1) {
            tries += 1;
            let p = draw(&mut rng);
            if func.value(&p) <= 0.0 {
                interior.push(p);
            }
        }

        let mut tube = Vec::with_capacity(boundary.len() + interior.len());
        for p in boundary.iter().chain(interior.iter()) {
            let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = norm(&dir).max(1e-12);
            let radius = 0.5 * rho * rng.gen::<f64>().powf(1.0 / n as f64);
            dir.iter_mut().for_each(|d| *d *= radius / len);
            tube.push(p.iter().zip(&dir).map(|(a, b)| a + b).collect());
        }

        SampleSet {
            boundary,
            interior,
            tube,
        }
    }
}

/// Estimates `(eta, m_psi_bar, m_psi)` by sampling.
///
/// `eta = safety * min |grad psi| / 2` over boundary samples, `m_psi_bar` is
/// the largest sampled `|grad psi|` over `C`, and `m_psi` is half the largest
/// Hessian spectral norm over `C + rho/2 B`, raised to `4 eta / rho` if needed.
pub fn estimate_constants(
    func: &dyn LevelSetFunction,
    sampler: &Sampler,
    safety: f64,
    bdry_tol: f64,
    rho_smooth: f64,
) -> Result<GeometryConstants> {
    if !(safety > 0.0 && safety < 1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!("safety must lie in (0, 1], got {safety}")));
    }
    let samples = sampler.sample(func, bdry_tol, rho_smooth);
    if samples.boundary.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = func.dim();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n * n];

    let min_bdry = samples
        .boundary
        .iter()
        .map(|p| {
            func.gradient(p, &mut g);
            norm(&g)
        })
        .fold(f64::INFINITY, f64::min);
    let eta = safety * min_bdry / 2.0;

    let m_psi_bar = samples
        .boundary
        .iter()
        .chain(samples.interior.iter())
        .map(|p| {
            func.gradient(p, &mut g);
            norm(&g)
        })
        .fold(0.0_f64, f64::max);

    let lip = samples
        .boundary
        .iter()
        .chain(samples.interior.iter())
        .chain(samples.tube.iter())
        .map(|p| {
            func.hessian(p, &mut h);
            sym_spectral_norm(&h, n)
        })
        .fold(0.0_f64, f64::max);

    Ok(GeometryConstants {
        eta,
        m_psi_bar,
        m_psi: (0.5 * lip).max(4.0 * eta / rho_smooth),
    })
}
