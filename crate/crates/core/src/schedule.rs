//! Penalty schedules and the shifted endpoint data of each approximating
//! problem.

use crate::error::{Error, Result};
use crate::geometry::LevelSetC;
use crate::instance::{EndpointSet, NormalCone};
use crate::linalg::{dist, dot, norm};

/// `gamma_k`, `alpha_k = ln(eta gamma_k / (2 Mbar)) / gamma_k` and
/// `rho_k = alpha_k / eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySchedule {
    pub gammas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub m_bar: f64,
    pub eta: f64,
}

/// `2 Mbar / eta`, the lower bound every penalty parameter must exceed.
pub fn gamma_threshold(m_bar: f64, eta: f64) -> f64 {
    2.0 * m_bar / eta
}

/// The margin `alpha` for a single penalty parameter.
pub fn alpha_for(gamma: f64, m_bar: f64, eta: f64) -> Result<f64> {
    let threshold = gamma_threshold(m_bar, eta);
    if !(gamma > threshold) {
        return Err(Error::GammaTooSmall { gamma, threshold });
    }
    Ok((eta * gamma / (2.0 * m_bar)).ln() / gamma)
}

/// Geometric schedule `gamma_k = gamma_0 growth^k`, `k < count`.
///
/// Fails with `GammaTooSmall` at the threshold, and with `InvalidParameter`
/// when the margins would not decrease strictly (which happens for slow growth
/// just above the threshold, where `ln(c gamma)/gamma` is still increasing).
pub fn make_schedule(
    m_bar: f64,
    eta: f64,
    gamma_0: f64,
    growth: f64,
    count: usize,
) -> Result<PenaltySchedule> {
    if !(m_bar > 0.0) || !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Mbar and eta must be positive (got {m_bar}, {eta})"
        )));
    }
    if !(growth > 1.0) || count == 0 {
        return Err(Error::InvalidParameter(format!(
            "growth must exceed 1 and count be at least 1 (got {growth}, {count})"
        )));
    }
    let gammas: Vec<f64> = (0..count).map(|k| gamma_0 * growth.powi(k as i32)).collect();
    let alphas = gammas
        .iter()
        .map(|&g| alpha_for(g, m_bar, eta))
        .collect::<Result<Vec<_>>>()?;
    if alphas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter(format!(
            "margins are not strictly decreasing for gamma_0 = {gamma_0}, growth = {growth}"
        )));
    }
    let rhos = alphas.iter().map(|a| a / eta).collect();
    Ok(PenaltySchedule {
        gammas,
        alphas,
        rhos,
        m_bar,
        eta,
    })
}

impl PenaltySchedule {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// `2 Mbar / eta`: the value of `gamma e^{-alpha gamma}` at every stage.
    pub fn xi_bound(&self) -> f64 {
        gamma_threshold(self.m_bar, self.eta)
    }

    /// Largest relative deviation of `gamma_k e^{-alpha_k gamma_k}` from
    /// `2 Mbar / eta`.
    pub fn identity_residual(&self) -> f64 {
        let target = self.xi_bound();
        self.gammas
            .iter()
            .zip(&self.alphas)
            .map(|(g, a)| ((g * (-a * g).exp()) - target).abs() / target)
            .fold(0.0, f64::max)
    }

    /// `alpha_k`: `C(k) = {psi <= -alpha_k}`.
    pub fn inner_set_margin(&self, k: usize) -> f64 {
        self.alphas[k]
    }

    pub fn in_inner_set(&self, geometry: &LevelSetC, x: &[f64], k: usize) -> bool {
        geometry.eval_psi(x) <= -self.alphas[k]
    }

    /// `c_k`: the initial point pushed `rho_k` into `C` along the inward
    /// normal when it lies on the boundary band, unchanged otherwise.
    pub fn shift_initial_point(&self, geometry: &LevelSetC, x0: &[f64], k: usize) -> Vec<f64> {
        if geometry.eval_psi(x0) < -geometry.bdry_tol {
            return x0.to_vec();
        }
        let g = geometry.grad_psi_vec(x0);
        let len = norm(&g);
        if len == 0.0 {
            return x0.to_vec();
        }
        let rho = self.rhos[k];
        x0.iter().zip(&g).map(|(x, d)| x - rho * d / len).collect()
    }

    /// First stage whose shifted initial point lies in `C(k)`, and whether
    /// every later stage does as well.
    pub fn first_inner_stage(&self, geometry: &LevelSetC, x0: &[f64]) -> Option<usize> {
        let ok: Vec<bool> = (0..self.len())
            .map(|k| self.in_inner_set(geometry, &self.shift_initial_point(geometry, x0, k), k))
            .collect();
        (0..ok.len()).find(|&k| ok[k..].iter().all(|&b| b))
    }
}

/// `[(C_1 ∩ B(x_bar_1, delta_0)) - x_bar_1 + x_gamma_1] ∩ C`.
#[derive(Debug, Clone)]
pub struct ShiftedTerminalSet {
    pub base: EndpointSet,
    pub center: Vec<f64>,
    pub radius: f64,
    pub shift: Vec<f64>,
    pub geometry: LevelSetC,
}

pub fn shifted_terminal_set(
    c1: &EndpointSet,
    x_bar_1: &[f64],
    x_gamma_1: &[f64],
    delta_0: f64,
    geometry: &LevelSetC,
) -> ShiftedTerminalSet {
    ShiftedTerminalSet {
        base: c1.clone(),
        center: x_bar_1.to_vec(),
        radius: delta_0,
        shift: x_gamma_1.iter().zip(x_bar_1).map(|(a, b)| a - b).collect(),
        geometry: geometry.clone(),
    }
}

impl ShiftedTerminalSet {
    fn unshift(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.shift).map(|(a, s)| a - s).collect()
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        let z = self.unshift(y);
        self.base.contains(&z, tol)
            && dist(&z, &self.center) <= self.radius + tol
            && self.geometry.eval_psi(y) <= tol.max(self.geometry.bdry_tol)
    }

    /// Active cones at `y`: the translated `C_1` cone, plus outward rays for
    /// an active ball boundary and an active `C` boundary. The normal cone of
    /// the intersection contains their sum.
    pub fn normal_cones(&self, y: &[f64], tol: f64) -> Result<Vec<NormalCone>> {
        if !self.contains(y, tol) {
            return Err(Error::EndpointInfeasible {
                which: "terminal",
                distance: self.base.distance(&self.unshift(y)),
            });
        }
        let z = self.unshift(y);
        let mut cones = vec![self.base.normal_cone(&z, tol)?];
        let r = dist(&z, &self.center);
        if (r - self.radius).abs() <= tol && r > 0.0 {
            cones.push(NormalCone::Ray {
                normal: z.iter().zip(&self.center).map(|(a, c)| a - c).collect(),
            });
        }
        if self.geometry.eval_psi(y).abs() <= tol.max(self.geometry.bdry_tol) {
            cones.push(NormalCone::Ray {
                normal: self.geometry.grad_psi_vec(y),
            });
        }
        Ok(cones)
    }

    /// Distance from `v` to the sum of the active cones at `y`.
    pub fn normal_cone_distance(&self, y: &[f64], v: &[f64], tol: f64) -> Result<f64> {
        let cones = self.normal_cones(y, tol)?;
        Ok(cone_sum_distance(&cones, v))
    }
}

/// Distance from `v` to `K_0 + sum_j {c a_j : c >= 0}`, where every cone after
/// the first is a ray. Minimizes over the ray coefficients by cyclic
/// one-dimensional searches.
pub fn cone_sum_distance(cones: &[NormalCone], v: &[f64]) -> f64 {
    let (first, rest) = match cones.split_first() {
        Some(s) => s,
        None => return norm(v),
    };
    let rays: Vec<&Vec<f64>> = rest
        .iter()
        .filter_map(|c| match c {
            NormalCone::Ray { normal } if dot(normal, normal) > 0.0 => Some(normal),
            _ => None,
        })
        .collect();
    let residual = |coef: &[f64]| -> f64 {
        let mut w = v.to_vec();
        for (c, a) in coef.iter().zip(&rays) {
            for i in 0..w.len() {
                w[i] -= c * a[i];
            }
        }
        first.distance(&w)
    };
    let mut coef = vec![0.0; rays.len()];
    let scale = norm(v).max(1e-300);
    for _ in 0..50 {
        for j in 0..rays.len() {
            let hi = 2.0 * scale / norm(rays[j]) + coef[j];
            let (mut a, mut b) = (0.0, hi);
            for _ in 0..100 {
                let m1 = a + (b - a) / 3.0;
                let m2 = b - (b - a) / 3.0;
                coef[j] = m1;
                let f1 = residual(&coef);
                coef[j] = m2;
                let f2 = residual(&coef);
                if f1 <= f2 {
                    b = m2;
                } else {
                    a = m1;
                }
            }
            coef[j] = 0.5 * (a + b);
        }
    }
    residual(&coef).min(first.distance(v))
}
