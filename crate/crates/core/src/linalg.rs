//! Dense linear algebra for desk-scale problems.
//!
//! Two solvers are provided: an LU factorization with partial pivoting for
//! the square Bellman/occupancy systems, and a minimum-norm solver for
//! symmetric positive semidefinite normal equations built on a cyclic Jacobi
//! eigendecomposition. The latter also exposes the numerical nullspace.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

/// Relative singular-value cutoff used by every least-squares fit.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self += alpha * u v^T`
    pub fn add_outer(&mut self, alpha: f64, u: &[f64], v: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let scale = alpha * ui;
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += scale * vj;
            }
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol))
    }

    fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Max-norm of `a - b`.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `‖a − b‖∞ / ‖b‖∞`, with the denominator floored at machine epsilon.
pub fn rel_max_err(a: &[f64], b: &[f64]) -> f64 {
    max_abs_diff(a, b) / max_abs(b).max(f64::EPSILON)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinalgError {
    /// A zero (or subnormal) pivot was met during elimination.
    Singular {
        column: usize,
    },
    DimensionMismatch {
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Singular { column } => {
                write!(f, "singular matrix (zero pivot in column {column})")
            }
            Self::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
        }
    }
}

/// LU factors `P A = L U` stored compactly.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes a square matrix with partial (row) pivoting.
    pub fn factor(mut a: Matrix) -> Result<Self, LinalgError> {
        let n = a.rows;
        if a.cols != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: a.cols,
            });
        }
        let scale = libm::sqrt(a.frobenius_sq()).max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold(
                    (k, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
            if pivot <= n as f64 * f64::EPSILON * scale {
                return Err(LinalgError::Singular { column: k });
            }
            if p != k {
                perm.swap(p, k);
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
            }
            let diag = a[(k, k)];
            for i in k + 1..n {
                let factor = a[(i, k)] / diag;
                a[(i, k)] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        let akj = a[(k, j)];
                        a[(i, j)] -= factor * akj;
                    }
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        check_len(n, b.len())?;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / self.lu[(i, i)];
        }
        Ok(x)
    }

    /// Solves `A^T x = b` with the same factors.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = self.dim();
        check_len(n, b.len())?;
        // A^T = U^T L^T P, so solve U^T y = b, L^T z = y, x = P^T z.
        let mut y = b.to_vec();
        for i in 0..n {
            let s: f64 = (0..i).map(|j| self.lu[(j, i)] * y[j]).sum();
            y[i] = (y[i] - s) / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|j| self.lu[(j, i)] * y[j]).sum();
            y[i] -= s;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = y[k];
        }
        Ok(x)
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), LinalgError> {
    if expected == found {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch { expected, found })
    }
}

/// Eigendecomposition of a symmetric matrix, `A = V diag(values) V^T`.
/// Column `i` of `vectors` pairs with `values[i]`; values are sorted descending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

impl SymmetricEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        (0..self.vectors.rows)
            .map(|r| self.vectors[(r, i)])
            .collect()
    }
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigenvalue algorithm. Only the upper triangle is read.
pub fn symmetric_eigen(a: &Matrix) -> SymmetricEigen {
    assert_eq!(a.rows, a.cols, "symmetric_eigen needs a square matrix");
    let n = a.rows;
    let mut m = a.clone();
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    let mut v = Matrix::identity(n);
    let total = m.frobenius_sq();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        if off <= total * 1e-32 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                if t == 0.0 {
                    m[(p, q)] = 0.0;
                    m[(q, p)] = 0.0;
                    continue;
                }
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                m[(p, q)] = 0.0;
                m[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(j, j)].total_cmp(&m[(i, i)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    SymmetricEigen { values, vectors }
}

/// Result of a minimum-norm solve of a symmetric PSD system.
#[derive(Debug, Clone)]
pub struct MinNormSolution {
    pub x: Vec<f64>,
    /// Number of eigenvalues above the cutoff.
    pub rank: usize,
    /// Absolute cutoff `rcond * sigma_max` that was applied.
    pub cutoff: f64,
    /// Orthonormal basis of the discarded eigenspace.
    pub nullspace: Vec<Vec<f64>>,
}

/// Minimum-norm solution of `A x = c` for symmetric positive semidefinite `A`.
///
/// Eigenvalues with `|λ| <= rcond * max|λ|` are treated as zero, so `x` is the
/// pseudo-inverse solution `A⁺ c` and lies orthogonal to the returned nullspace.
pub fn min_norm_solve(a: &Matrix, c: &[f64], rcond: f64) -> Result<MinNormSolution, LinalgError> {
    check_len(a.rows, a.cols)?;
    check_len(a.rows, c.len())?;
    let n = a.rows;
    if n == 0 {
        return Ok(MinNormSolution {
            x: Vec::new(),
            rank: 0,
            cutoff: 0.0,
            nullspace: Vec::new(),
        });
    }
    let eig = symmetric_eigen(a);
    let sigma_max = eig.values.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let cutoff = rcond * sigma_max;
    let mut x = vec![0.0; n];
    let mut rank = 0;
    let mut nullspace = Vec::new();
    for (i, &lambda) in eig.values.iter().enumerate() {
        let vi = eig.vector(i);
        if sigma_max > 0.0 && lambda.abs() > cutoff {
            rank += 1;
            let coef = dot(&vi, c) / lambda;
            for (xk, vk) in x.iter_mut().zip(&vi) {
                *xk += coef * vk;
            }
        } else {
            nullspace.push(vi);
        }
    }
    Ok(MinNormSolution {
        x,
        rank,
        cutoff,
        nullspace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        max_abs_diff(a, b) <= tol
    }

    #[test]
    fn lu_solves_small_system_and_transpose() {
        let a = Matrix::from_row_major(3, 3, vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0]);
        let lu = Lu::factor(a.clone()).unwrap();
        let b = [1.0, 2.0, 3.0];
        let x = lu.solve(&b).unwrap();
        assert!(close(&a.mul_vec(&x), &b, 1e-14));
        let y = lu.solve_transpose(&b).unwrap();
        assert!(close(&a.transpose().mul_vec(&y), &b, 1e-14));
    }

    #[test]
    fn lu_reports_singular() {
        let a = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(Lu::factor(a), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = Matrix::from_row_major(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 2.0]);
        let eig = symmetric_eigen(&a);
        let mut rebuilt = Matrix::zeros(3, 3);
        for i in 0..3 {
            let v = eig.vector(i);
            rebuilt.add_outer(eig.values[i], &v, &v);
        }
        assert!(close(rebuilt.as_slice(), a.as_slice(), 1e-13));
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn min_norm_on_rank_one_block() {
        // 0.25 * [[1,-1],[-1,1]] with c = (0.25, -0.25): min-norm x = (0.5, -0.5).
        let a = Matrix::from_row_major(2, 2, vec![0.25, -0.25, -0.25, 0.25]);
        let sol = min_norm_solve(&a, &[0.25, -0.25], DEFAULT_RCOND).unwrap();
        assert_eq!(sol.rank, 1);
        assert!(close(&sol.x, &[0.5, -0.5], 1e-15));
        assert_eq!(sol.nullspace.len(), 1);
        let z = &sol.nullspace[0];
        assert!((z[0] - z[1]).abs() < 1e-15);
    }

    #[test]
    fn min_norm_of_zero_matrix_is_zero() {
        let a = Matrix::zeros(3, 3);
        let sol = min_norm_solve(&a, &[0.0; 3], DEFAULT_RCOND).unwrap();
        assert_eq!(sol.rank, 0);
        assert_eq!(sol.x, vec![0.0; 3]);
        assert_eq!(sol.nullspace.len(), 3);
    }
}
