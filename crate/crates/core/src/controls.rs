//! Piecewise-linear controls on a time grid.

use crate::error::{Error, Result};
use crate::instance::ControlSet;
use crate::linalg::{dist, norm};

/// `N + 1` equally spaced nodes on `[ta, tb]`.
pub fn uniform_grid(ta: f64, tb: f64, n: usize) -> Vec<f64> {
    let h = (tb - ta) / n as f64;
    let mut grid: Vec<f64> = (0..=n).map(|i| ta + i as f64 * h).collect();
    grid[n] = tb;
    grid
}

/// Index `i` of the grid cell `[t_i, t_{i+1}]` holding `t`, clamped to the
/// grid.
pub fn locate(grid: &[f64], t: f64) -> usize {
    let last = grid.len() - 2;
    match grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
        Ok(i) => i.min(last),
        Err(0) => 0,
        Err(i) => (i - 1).min(last),
    }
}

/// Node values of a control, read as its piecewise-linear interpolant.
/// Values are stored node-major: node `i` occupies `values[i*m .. (i+1)*m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridControl {
    pub grid: Vec<f64>,
    pub m: usize,
    pub values: Vec<f64>,
}

impl GridControl {
    pub fn new(grid: Vec<f64>, m: usize, values: Vec<f64>) -> Self {
        assert_eq!(grid.len() * m, values.len(), "grid and values disagree");
        GridControl { grid, m, values }
    }

    pub fn from_fn(grid: &[f64], m: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * m);
        for &t in grid {
            values.extend(f(t));
        }
        GridControl::new(grid.to_vec(), m, values)
    }

    pub fn constant(grid: &[f64], value: &[f64]) -> Self {
        GridControl::from_fn(grid, value.len(), |_| value.to_vec())
    }

    pub fn nodes(&self) -> usize {
        self.grid.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn node_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.m..(i + 1) * self.m]
    }

    /// Linear interpolation at `t`, clamped to the grid.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let i = locate(&self.grid, t);
        let (t0, t1) = (self.grid[i], self.grid[i + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let (a, b) = (self.node(i), self.node(i + 1));
        for j in 0..self.m {
            out[j] = (1.0 - w) * a[j] + w * b[j];
        }
    }

    pub fn eval_vec(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        self.eval(t, &mut out);
        out
    }

    /// Constant derivative on cell `i`.
    pub fn slope(&self, i: usize) -> Vec<f64> {
        let h = self.grid[i + 1] - self.grid[i];
        (0..self.m)
            .map(|j| (self.node(i + 1)[j] - self.node(i)[j]) / h)
            .collect()
    }

    pub fn sup_norm(&self) -> f64 {
        (0..self.nodes())
            .map(|i| norm(self.node(i)))
            .fold(0.0, f64::max)
    }

    /// `||u'||_2` of the interpolant.
    pub fn deriv_l2(&self) -> f64 {
        (0..self.nodes() - 1)
            .map(|i| {
                let h = self.grid[i + 1] - self.grid[i];
                let s = self.slope(i);
                h * s.iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    /// `||u||_inf + ||u'||_2`.
    pub fn w12_norm(&self) -> f64 {
        self.sup_norm() + self.deriv_l2()
    }

    fn check_grid(&self, other: &GridControl) -> Result<()> {
        if self.m != other.m
            || self.grid.len() != other.grid.len()
            || self
                .grid
                .iter()
                .zip(&other.grid)
                .any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
        {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    pub fn difference(&self, other: &GridControl) -> Result<GridControl> {
        self.check_grid(other)?;
        Ok(GridControl::new(
            self.grid.clone(),
            self.m,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }
}

/// `(||u - v||_inf, ||u' - v'||_2)`.
pub fn w12_distance(u: &GridControl, v: &GridControl) -> Result<(f64, f64)> {
    let d = u.difference(v)?;
    Ok((d.sup_norm(), d.deriv_l2()))
}

/// `z(t_i) = int_0^{t_i} |u' - u_ref'|^2`, one value per node.
pub fn z_accumulator(u: &GridControl, u_ref: &GridControl) -> Result<Vec<f64>> {
    let d = u.difference(u_ref)?;
    let mut z = Vec::with_capacity(d.nodes());
    let mut acc = 0.0;
    z.push(0.0);
    for i in 0..d.nodes() - 1 {
        let h = d.grid[i + 1] - d.grid[i];
        acc += h * d.slope(i).iter().map(|v| v * v).sum::<f64>();
        z.push(acc);
    }
    Ok(z)
}

/// Nearest point of `U ∩ B(center, radius)`. Intervals and boxes with an
/// interval trust region are handled exactly; other combinations use
/// Dykstra's alternating projections.
pub fn project_with_trust(
    set: &ControlSet,
    u: &[f64],
    trust: Option<(&[f64], f64)>,
    t: f64,
) -> Result<Vec<f64>> {
    let Some((center, radius)) = trust else {
        return Ok(set.project(u));
    };
    let ball = ControlSet::Ball {
        center: center.to_vec(),
        radius,
    };
    if let ControlSet::Interval { lo, hi } = set {
        let lo = lo.max(center[0] - radius);
        let hi = hi.min(center[0] + radius);
        if lo > hi + 1e-14 {
            return Err(Error::EmptyIntersection { t });
        }
        return Ok(vec![u[0].clamp(lo, hi.max(lo))]);
    }
    let mut x = u.to_vec();
    let mut p = vec![0.0; u.len()];
    let mut q = vec![0.0; u.len()];
    for _ in 0..500 {
        let a: Vec<f64> = x.iter().zip(&p).map(|(x, p)| x + p).collect();
        let y = set.project(&a);
        p = a.iter().zip(&y).map(|(a, y)| a - y).collect();
        let b: Vec<f64> = y.iter().zip(&q).map(|(y, q)| y + q).collect();
        let next = ball.project(&b);
        q = b.iter().zip(&next).map(|(b, n)| b - n).collect();
        let moved = dist(&next, &x);
        x = next;
        if moved <= 1e-14 {
            break;
        }
    }
    if !set.contains(&x, 1e-9) || !ball.contains(&x, 1e-9) {
        return Err(Error::EmptyIntersection { t });
    }
    Ok(x)
}

/// Projects every node onto `U(t_i)`, intersected with `B(u_ref(t_i), delta)`
/// when a trust region is given.
pub fn project_pointwise(
    u: &GridControl,
    sets: &dyn Fn(f64) -> ControlSet,
    trust: Option<(&GridControl, f64)>,
) -> Result<GridControl> {
    if let Some((r, _)) = trust {
        u.check_grid(r)?;
    }
    let mut out = u.clone();
    for i in 0..u.nodes() {
        let t = u.grid[i];
        let set = sets(t);
        if set.is_empty() {
            return Err(Error::EmptyIntersection { t });
        }
        let projected = project_with_trust(&set, u.node(i), trust.map(|(r, d)| (r.node(i), d)), t)?;
        out.node_mut(i).copy_from_slice(&projected);
    }
    Ok(out)
}
