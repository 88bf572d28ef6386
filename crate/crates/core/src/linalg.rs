//! Small dense helpers on row-major slices. State dimensions are tiny, so
//! everything here works in place on caller-owned buffers.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `out = A x` for a `rows x cols` row-major matrix.
#[inline]
pub fn matvec(a: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        out[i] = dot(&a[i * cols..(i + 1) * cols], x);
    }
}

/// `out = A^T y` for a `rows x cols` row-major matrix.
#[inline]
pub fn matvec_t(a: &[f64], rows: usize, cols: usize, y: &[f64], out: &mut [f64]) {
    out[..cols].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..rows {
        let yi = y[i];
        if yi != 0.0 {
            for j in 0..cols {
                out[j] += a[i * cols + j] * yi;
            }
        }
    }
}

/// Frobenius norm, used as a cheap upper bound of the operator norm.
#[inline]
pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

/// Spectral norm of a symmetric `n x n` matrix.
pub fn sym_spectral_norm(a: &[f64], n: usize) -> f64 {
    let m = nalgebra::DMatrix::from_row_slice(n, n, a);
    let eig = nalgebra::SymmetricEigen::new(m);
    eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solves a symmetric tridiagonal system in place (Thomas algorithm).
/// `diag` and `off` (length n-1) are left untouched; `rhs` is overwritten
/// with the solution.
pub fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    if n == 0 {
        return;
    }
    let mut c = vec![0.0; n];
    let mut b = diag[0];
    rhs[0] /= b;
    for i in 1..n {
        c[i] = off[i - 1] / b;
        b = diag[i] - off[i - 1] * c[i];
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / b;
    }
    for i in (0..n - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i + 1] * next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_matches_dense_solve() {
        let diag = [4.0, 5.0, 6.0, 3.0];
        let off = [1.0, -2.0, 0.5];
        let mut dense = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for i in 0..4 {
            dense[(i, i)] = diag[i];
        }
        for i in 0..3 {
            dense[(i, i + 1)] = off[i];
            dense[(i + 1, i)] = off[i];
        }
        let b = nalgebra::DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let expected = dense.lu().solve(&b).unwrap();
        let mut rhs = b.as_slice().to_vec();
        solve_tridiagonal(&diag, &off, &mut rhs);
        for i in 0..4 {
            assert!((rhs[i] - expected[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = [3.0, 0.0, 0.0, -7.0];
        assert!((sym_spectral_norm(&a, 2) - 7.0).abs() < 1e-12);
    }
}
