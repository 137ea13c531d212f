//! Small dense linear algebra: a row-major matrix and Householder least
//! squares. Problem sizes here are at most a few hundred columns.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values cannot fill a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "mul_vec length mismatch");
        (0..self.rows).map(|i| self.row(i).iter().zip(x).fold(T::zero(), |acc, (&a, &b)| acc + a * b)).collect()
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &[T]) -> Vec<T> {
        assert_eq!(y.len(), self.rows, "tr_mul_vec length mismatch");
        let mut out = vec![T::zero(); self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        out
    }

    /// `AᵀA`.
    pub fn gram(&self) -> Matrix<T> {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for i in 0..self.rows {
            let r = self.row(i);
            for j in 0..n {
                let rj = r[j];
                if rj == T::zero() {
                    continue;
                }
                for k in j..n {
                    g.data[j * n + k] += rj * r[k];
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                g.data[j * n + k] = g.data[k * n + j];
            }
        }
        g
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.rows).map(|i| self.row(i).iter().fold(T::zero(), |acc, v| acc + v.abs())).fold(T::zero(), T::max)
    }
}

/// Least-squares solution of `A[:, cols] z ≈ b` by Householder QR.
///
/// Columns whose pivot collapses below a relative threshold (numerically
/// dependent on earlier columns) receive a zero coefficient.
pub fn lstsq_columns<T: Scalar>(a: &Matrix<T>, cols: &[usize], b: &[T]) -> Vec<T> {
    let m = a.rows();
    let p = cols.len();
    // Column-major working copy.
    let mut q: Vec<Vec<T>> = cols.iter().map(|&j| a.column(j)).collect();
    let mut rhs = b.to_vec();
    let scale = q.iter().map(|c| c.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()).fold(T::zero(), T::max);
    let eps = T::epsilon() * T::lit(64.0) * scale.max(T::min_positive_value());
    let mut diag_ok = vec![false; p];

    let steps = p.min(m);
    for k in 0..steps {
        let norm = q[k][k..].iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        if norm <= eps {
            continue;
        }
        diag_ok[k] = true;
        let alpha = if q[k][k] > T::zero() { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k below the diagonal.
        let mut v: Vec<T> = q[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2 = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vnorm2 == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        for col in q.iter_mut().skip(k) {
            let dot = v.iter().zip(&col[k..]).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let f = two * dot / vnorm2;
            for (c, &vi) in col[k..].iter_mut().zip(&v) {
                *c -= f * vi;
            }
        }
        let dot = v.iter().zip(&rhs[k..]).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
        let f = two * dot / vnorm2;
        for (c, &vi) in rhs[k..].iter_mut().zip(&v) {
            *c -= f * vi;
        }
    }

    let mut z = vec![T::zero(); p];
    for k in (0..steps).rev() {
        if !diag_ok[k] {
            continue;
        }
        let mut s = rhs[k];
        for j in k + 1..steps {
            s -= q[j][k] * z[j];
        }
        z[k] = s / q[k][k];
    }
    z
}

/// Solves a small symmetric positive (semi)definite system by Cholesky with
/// a tiny diagonal jitter when the factorization breaks down.
pub fn solve_spd<T: Scalar>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Shape("solve_spd requires a square system".into()));
    }
    let trace = (0..n).fold(T::zero(), |acc, i| acc + a.get(i, i).abs());
    let mut jitter = T::zero();
    for _ in 0..8 {
        if let Some(l) = cholesky(a, jitter) {
            let mut y = vec![T::zero(); n];
            for i in 0..n {
                let mut s = b[i];
                for k in 0..i {
                    s -= l[i * n + k] * y[k];
                }
                y[i] = s / l[i * n + i];
            }
            let mut x = vec![T::zero(); n];
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= l[k * n + i] * x[k];
                }
                x[i] = s / l[i * n + i];
            }
            return Ok(x);
        }
        jitter = if jitter == T::zero() { T::epsilon() * trace.max(T::one()) } else { jitter * T::lit(100.0) };
    }
    Err(Error::Domain("matrix is not positive definite".into()))
}

fn cholesky<T: Scalar>(a: &Matrix<T>, jitter: T) -> Option<Vec<T>> {
    let n = a.rows();
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstsq_recovers_exact_solution() {
        let a = Matrix::from_fn(6, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let x = [0.5, -1.0, 2.0];
        let b = a.mul_vec(&x);
        let z = lstsq_columns(&a, &[0, 1, 2], &b);
        for (zi, xi) in z.iter().zip(&x) {
            assert!((zi - xi).abs() < 1e-10);
        }
    }

    #[test]
    fn lstsq_handles_dependent_columns() {
        let a = Matrix::from_fn(4, 2, |i, _| i as f64 + 1.0);
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let z = lstsq_columns(&a, &[0, 1], &b);
        assert!((z[0] - 1.0).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn spd_solve() {
        let a = Matrix::from_row_major(2, 2, vec![4.0, 1.0, 1.0, 3.0]).unwrap();
        let x: Vec<f64> = solve_spd(&a, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }
}
