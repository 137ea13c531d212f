//! Lawson–Hanson active-set solver for `min ‖Ax − b‖₂ subject to x ≥ 0`.

use crate::error::{Error, Result};
use crate::linalg::{lstsq_columns, Matrix};
use crate::scalar::Scalar;

/// Default KKT tolerance, relative to `‖AᵀA‖∞`.
pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct NnlsSolution<T> {
    pub x: Vec<T>,
    /// `‖Ax − b‖₂` at the solution.
    pub residual: T,
    pub iterations: usize,
}

/// Solves the NNLS problem with the default iteration cap of `3n`.
///
/// On return, with `g = Aᵀ(Ax − b)` and `t = tol·‖AᵀA‖∞`: `|g_j| ≤ t` where
/// `x_j > 0` and `g_j ≥ −t` where `x_j = 0`.
pub fn nnls<T: Scalar>(a: &Matrix<T>, b: &[T], tol: T) -> Result<NnlsSolution<T>> {
    nnls_with_limit(a, b, tol, 3 * a.cols())
}

pub fn nnls_with_limit<T: Scalar>(a: &Matrix<T>, b: &[T], tol: T, max_iter: usize) -> Result<NnlsSolution<T>> {
    let (m, n) = (a.rows(), a.cols());
    if n == 0 {
        return Err(Error::Shape("NNLS needs at least one column".into()));
    }
    if b.len() != m {
        return Err(Error::Shape(format!("rhs has {} entries, matrix has {m} rows", b.len())));
    }
    if tol < T::zero() {
        return Err(Error::Validation("tolerance must be nonnegative".into()));
    }
    let thresh = tol * a.gram().norm_inf();

    let mut x = vec![T::zero(); n];
    let mut passive = vec![false; n];
    // Indices whose entry was immediately infeasible after being freed; they
    // stay out until the active set changes through another index.
    let mut blocked = vec![false; n];
    let mut iterations = 0usize;

    let dual = |x: &[T]| -> Vec<T> {
        let ax = a.mul_vec(x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        a.tr_mul_vec(&r)
    };
    let solve = |passive: &[bool]| -> Vec<T> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let z = lstsq_columns(a, &cols, b);
        let mut full = vec![T::zero(); n];
        for (&j, &v) in cols.iter().zip(&z) {
            full[j] = v;
        }
        full
    };

    let mut w = dual(&x);
    loop {
        let mut pick: Option<usize> = None;
        for j in 0..n {
            if passive[j] || blocked[j] || !(w[j] > thresh) {
                continue;
            }
            if pick.is_none_or(|p| w[j] > w[p]) {
                pick = Some(j);
            }
        }
        let Some(j) = pick else { break };
        if iterations >= max_iter {
            return Err(not_converged(iterations, &x));
        }
        iterations += 1;

        passive[j] = true;
        let mut z = solve(&passive);
        if !(z[j] > T::zero()) {
            passive[j] = false;
            blocked[j] = true;
            continue;
        }

        // Step back toward feasibility while any passive coefficient is
        // nonpositive.
        while (0..n).any(|i| passive[i] && z[i] <= T::zero()) {
            if iterations >= max_iter {
                return Err(not_converged(iterations, &x));
            }
            iterations += 1;
            let mut alpha = T::infinity();
            let mut leaving = usize::MAX;
            for i in 0..n {
                if passive[i] && z[i] <= T::zero() {
                    let t = x[i] / (x[i] - z[i]);
                    if t < alpha {
                        alpha = t;
                        leaving = i;
                    }
                }
            }
            for i in 0..n {
                if passive[i] {
                    let xi = x[i];
                    x[i] = xi + alpha * (z[i] - xi);
                }
            }
            x[leaving] = T::zero();
            for i in 0..n {
                if passive[i] && x[i] <= T::zero() {
                    passive[i] = false;
                    x[i] = T::zero();
                }
            }
            z = solve(&passive);
        }
        x = z;
        blocked.iter_mut().for_each(|b| *b = false);
        w = dual(&x);
    }

    let ax = a.mul_vec(&x);
    let residual = b.iter().zip(&ax).fold(T::zero(), |acc, (&bi, &ai)| acc + (ai - bi) * (ai - bi)).sqrt();
    Ok(NnlsSolution { x, residual, iterations })
}

fn not_converged<T: Scalar>(iterations: usize, x: &[T]) -> Error {
    Error::NotConverged { iterations, best: x.iter().map(|v| v.as_f64()).collect() }
}

/// Largest KKT violation of `x` scaled by `‖AᵀA‖∞`, plus the worst
/// primal infeasibility. Zero means the conditions hold exactly.
pub fn kkt_violation<T: Scalar>(a: &Matrix<T>, b: &[T], x: &[T]) -> f64 {
    let ax = a.mul_vec(x);
    let r: Vec<T> = ax.iter().zip(b).map(|(&p, &q)| p - q).collect();
    let g = a.tr_mul_vec(&r);
    let scale = a.gram().norm_inf().as_f64().max(f64::MIN_POSITIVE);
    let mut worst = 0f64;
    for (&xj, &gj) in x.iter().zip(&g) {
        let (xj, gj) = (xj.as_f64(), gj.as_f64());
        let v = if xj > 0.0 { gj.abs() } else { (-gj).max(0.0) };
        worst = worst.max(v / scale).max(-xj);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Matrix<f64> {
        Matrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn exact_column_is_selected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 20, 6);
        let b = a.column(3);
        let sol = nnls(&a, &b, DEFAULT_TOL).unwrap();
        for (j, &v) in sol.x.iter().enumerate() {
            let expect = if j == 3 { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-10, "x[{j}] = {v}");
        }
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn negative_direction_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // Nonnegative A so that -A·1 lies in the dual cone.
        let a = Matrix::from_fn(15, 5, |_, _| rng.gen_range(0.0..1.0));
        let b: Vec<f64> = a.mul_vec(&[1.0; 5]).iter().map(|v| -v).collect();
        let sol = nnls(&a, &b, DEFAULT_TOL).unwrap();
        assert!(sol.x.iter().all(|&v| v == 0.0));
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn kkt_and_objective_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let a = random_matrix(&mut rng, 30, 12);
            let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let sol = nnls(&a, &b, DEFAULT_TOL).unwrap();
            assert!(sol.x.iter().all(|&v| v >= 0.0));
            assert!(kkt_violation(&a, &b, &sol.x) <= DEFAULT_TOL);
            let bnorm = b.iter().map(|v| v * v).sum::<f64>();
            assert!(sol.residual * sol.residual <= bnorm + 1e-12);
        }
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Matrix::from_fn(20, 6, |_, _| rng.gen_range(0.0..1.0));
        let b = a.mul_vec(&[1.0, 2.0, 0.5, 0.7, 1.1, 0.3]);
        match nnls_with_limit(&a, &b, DEFAULT_TOL, 2) {
            Err(Error::NotConverged { iterations, best }) => {
                assert_eq!(iterations, 2);
                assert_eq!(best.len(), 6);
                assert!(best.iter().all(|&v| v >= 0.0));
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn works_in_f32() {
        let a = Matrix::<f32>::from_fn(8, 3, |i, j| ((i * 3 + j) % 5) as f32 + 0.5);
        let b = a.mul_vec(&[0.25, 0.0, 1.5]);
        let sol = nnls(&a, &b, 1e-6).unwrap();
        assert!((sol.x[0] - 0.25).abs() < 1e-4);
        assert!((sol.x[2] - 1.5).abs() < 1e-4);
    }

    #[test]
    fn shape_errors() {
        let a = Matrix::<f64>::zeros(3, 0);
        assert!(matches!(nnls(&a, &[0.0; 3], 0.0), Err(Error::Shape(_))));
        let a = Matrix::<f64>::zeros(3, 2);
        assert!(matches!(nnls(&a, &[0.0; 2], 0.0), Err(Error::Shape(_))));
    }
}
