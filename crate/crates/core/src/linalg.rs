//! Small dense linear-algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

/// Iteration budget for the power method.
pub const POWER_ITERATIONS: usize = 200;

/// Convergence tolerance for the power method.
pub const POWER_TOL: f64 = 1e-10;

/// Spectral norm of `a` (largest singular value), computed by power
/// iteration on `aᵀa` from a fixed deterministic start vector.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    // Deterministic start with nonzero overlap against any eigenvector.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0) * 1e-3);
    v /= v.norm();
    let mut value = 0.0f64;
    for _ in 0..POWER_ITERATIONS {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let delta = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        let prev = value;
        value = norm;
        if delta <= POWER_TOL && (value - prev).abs() <= POWER_TOL * (1.0 + value) {
            break;
        }
    }
    value.max(0.0).sqrt()
}

/// Eigenvalue range (min, max) of a symmetric matrix.
pub fn symmetric_eigen_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Solves a square dense linear system by LU with partial pivoting.
/// Returns `None` when the factorization is singular.
pub fn solve_dense(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    m.clone().lu().solve(rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;

    #[test]
    fn spectral_norm_matches_known_values() {
        let a = dmatrix![3.0, 0.0; 0.0, -2.0];
        assert_relative_eq!(spectral_norm(&a), 3.0, epsilon = 1e-10);
        let ones = DMatrix::from_element(4, 4, 1.0);
        assert_relative_eq!(spectral_norm(&ones), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn eigen_bounds_of_diagonal() {
        let m = dmatrix![2.0, 0.0; 0.0, 5.0];
        let (lo, hi) = symmetric_eigen_bounds(&m);
        assert_relative_eq!(lo, 2.0, epsilon = 1e-12);
        assert_relative_eq!(hi, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_dense_rejects_singular() {
        let m = dmatrix![1.0, 2.0; 2.0, 4.0];
        assert!(solve_dense(&m, &nalgebra::dvector![1.0, 1.0]).is_none());
        let ok = solve_dense(&dmatrix![2.0, 0.0; 0.0, 4.0], &nalgebra::dvector![2.0, 8.0]);
        assert_eq!(ok.unwrap(), nalgebra::dvector![1.0, 2.0]);
    }
}
