//! Small dense linear algebra for symmetric problems.
//!
//! Everything here works on row-major `f64` storage. Matrices are small: the
//! auxiliary moment matrix is `p x p` with `p` a handful, and covariance
//! matrices on the time grid are at most a few hundred points wide.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative tolerance used to decide symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Eigenvalues below `-PSD_TOL * max|eigenvalue|` count as genuinely negative.
pub const PSD_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix storage",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
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

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matrix product",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix difference",
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
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

/// A square matrix validated to be symmetric and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    /// Validates symmetry to [`SYMMETRY_TOL`] relative to the largest entry.
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix must be square",
                expected: m.rows,
                actual: m.cols,
            });
        }
        if !m.is_finite() {
            return Err(Error::Validation("matrix has non-finite entries".into()));
        }
        let tol = SYMMETRY_TOL * m.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                if (m[(i, j)] - m[(j, i)]).abs() > tol {
                    return Err(Error::Validation(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    /// Symmetrizes `(m + m') / 2` without validation; used where symmetry holds by construction.
    pub fn symmetrize(mut m: Matrix) -> Self {
        assert_eq!(m.rows, m.cols, "symmetrize needs a square matrix");
        for i in 0..m.rows {
            for j in (i + 1)..m.cols {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(Matrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Matrix::identity(dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(Matrix::from_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.scaled(factor))
    }
}

impl Index<(usize, usize)> for SymmetricMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

impl SymEigen {
    /// Rebuilds `sum_j f(eta_j) v_j v_j'`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> SymmetricMatrix {
        let n = self.values.len();
        let weights: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = 0.0;
                for (k, w) in weights.iter().enumerate() {
                    acc += self.vectors[(i, k)] * w * self.vectors[(j, k)];
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
        }
        SymmetricMatrix(out)
    }

    pub fn min_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Cyclic Jacobi eigendecomposition.
///
/// Each sweep visits every off-diagonal pair once and annihilates it with a
/// plane rotation; rotations are accumulated into the eigenvector matrix.
/// Iteration stops once the off-diagonal mass is negligible relative to the
/// Frobenius norm.
pub fn sym_eigen(m: &SymmetricMatrix) -> SymEigen {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = Matrix::identity(n);
    let frob = a.frobenius_norm();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= f64::EPSILON * 0.5 * frob || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate_columns(&mut a, p, q, c, s);
                rotate_rows(&mut a, p, q, c, s);
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                rotate_columns(&mut v, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    SymEigen { values, vectors }
}

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.rows {
        let mkp = m[(k, p)];
        let mkq = m[(k, q)];
        m[(k, p)] = c * mkp - s * mkq;
        m[(k, q)] = s * mkp + c * mkq;
    }
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.cols {
        let mpk = m[(p, k)];
        let mqk = m[(q, k)];
        m[(p, k)] = c * mpk - s * mqk;
        m[(q, k)] = s * mpk + c * mqk;
    }
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(m: &SymmetricMatrix) -> f64 {
    sym_eigen(m).max_abs_value()
}

/// Inverse of a moment matrix whose eigenvalues were floored at `a`.
#[derive(Debug, Clone)]
pub struct RegularizedInverse {
    pub inverse: SymmetricMatrix,
    /// The floored matrix itself. Equal to the input, bit for bit, when no floor was applied.
    pub regularized: SymmetricMatrix,
    pub floor_applied: bool,
    pub a: f64,
    pub min_eigenvalue: f64,
}

/// Spectral inverse of `sum_j max(eta_j, a) v_j v_j'`.
pub fn regularized_inverse(m: &SymmetricMatrix, a: f64) -> Result<RegularizedInverse> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter {
            name: "a",
            value: a,
            reason: "regularization floor must be positive and finite",
        });
    }
    let eig = sym_eigen(m);
    let min_eigenvalue = eig.min_value();
    let tol = PSD_TOL * eig.max_abs_value().max(1.0);
    if min_eigenvalue < -tol {
        return Err(Error::NotPositiveSemidefinite {
            eigenvalue: min_eigenvalue,
            tolerance: tol,
        });
    }
    let floor_applied = min_eigenvalue < a;
    let inverse = eig.reconstruct_with(|eta| 1.0 / eta.max(a));
    let regularized = if floor_applied {
        eig.reconstruct_with(|eta| eta.max(a))
    } else {
        m.clone()
    };
    Ok(RegularizedInverse {
        inverse,
        regularized,
        floor_applied,
        a,
        min_eigenvalue,
    })
}

/// Spectral inverse that refuses near-singular input.
///
/// The matrix is singular when its smallest eigenvalue is at most
/// `rel_threshold * trace / dim`.
pub fn checked_inverse(m: &SymmetricMatrix, rel_threshold: f64) -> Result<SymmetricMatrix> {
    let eig = sym_eigen(m);
    let threshold = rel_threshold * m.trace() / m.dim().max(1) as f64;
    let min_eigenvalue = eig.min_value();
    if min_eigenvalue <= threshold {
        return Err(Error::Singular {
            min_eigenvalue,
            threshold,
        });
    }
    Ok(eig.reconstruct_with(|eta| 1.0 / eta))
}

/// Clips negative eigenvalues to zero. Already-PSD input is returned unchanged.
pub fn psd_project(m: &SymmetricMatrix) -> SymmetricMatrix {
    let eig = sym_eigen(m);
    if eig.min_value() >= 0.0 {
        return m.clone();
    }
    eig.reconstruct_with(|eta| eta.max(0.0))
}

/// Lower-triangular `L` with `L L' = m` for positive semidefinite `m`.
///
/// Pivots that fall within tolerance of zero are treated as exact zeros, so
/// rank-deficient input factors cleanly. A pivot clearly below zero means the
/// input is indefinite; the offending eigenvalue is then reported.
pub fn cholesky_psd(m: &SymmetricMatrix) -> Result<Matrix> {
    let n = m.dim();
    let scale = m.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let tol = PSD_TOL * scale.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            let eig = sym_eigen(m);
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: eig.min_value(),
                tolerance: PSD_TOL * eig.max_abs_value(),
            });
        }
        if d <= tol {
            // Zero pivot: the remaining column is zero for a PSD matrix.
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut acc = m[(i, j)];
            for k in 0..j {
                acc -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = acc / ljj;
        }
    }
    Ok(l)
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::DimensionMismatch {
            context: "lu_solve needs a square system",
            expected: n,
            actual: a.cols(),
        });
    }
    if b.rows() != n {
        return Err(Error::DimensionMismatch {
            context: "lu_solve right-hand side",
            expected: n,
            actual: b.rows(),
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[(i, col)].abs().total_cmp(&lu[(j, col)].abs()))
            .unwrap_or(col);
        let pivot = lu[(pivot_row, col)];
        if pivot.abs() <= 1e-14 * scale {
            return Err(Error::Singular {
                min_eigenvalue: pivot.abs(),
                threshold: 1e-14 * scale,
            });
        }
        if pivot_row != col {
            for k in 0..n {
                let tmp = lu[(col, k)];
                lu[(col, k)] = lu[(pivot_row, k)];
                lu[(pivot_row, k)] = tmp;
            }
            for k in 0..x.cols() {
                let tmp = x[(col, k)];
                x[(col, k)] = x[(pivot_row, k)];
                x[(pivot_row, k)] = tmp;
            }
        }
        for r in (col + 1)..n {
            let factor = lu[(r, col)] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                lu[(r, k)] -= factor * lu[(col, k)];
            }
            for k in 0..x.cols() {
                x[(r, k)] -= factor * x[(col, k)];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..x.cols() {
            let mut acc = x[(col, k)];
            for j in (col + 1)..n {
                acc -= lu[(col, j)] * x[(j, k)];
            }
            x[(col, k)] = acc / lu[(col, col)];
        }
    }
    Ok(x)
}
