//! Dense complex linear algebra shared by every link-level computation:
//! a sorted full SVD, numerical rank, kernel bases, Hermitian inverse square
//! roots and log-determinants.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen};

use crate::error::{OiaError, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix = DMatrix<C64>;

const SVD_MAX_ITER: usize = 10_000;
const EIG_MAX_ITER: usize = 10_000;

/// Relative singular value threshold below which a direction is treated as
/// numerically null, for an `rows x cols` operand.
pub fn default_rank_tol(rows: usize, cols: usize) -> f64 {
    rows.max(cols).max(1) as f64 * f64::EPSILON * 64.0
}

/// Full SVD `A = U diag(s) V^H` with `U` (m x m) and `V` (n x n) unitary and
/// the `min(m, n)` singular values in non-increasing order.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v: ComplexMatrix,
}

impl SortedSvd {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    /// Number of singular values above `rank_tol * s_max`.
    pub fn rank(&self, rank_tol: f64) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax <= 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .take_while(|&&s| s > rank_tol * smax)
            .count()
    }

    /// Rebuilds `U diag(s) V^H`.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let (m, n) = (self.rows(), self.cols());
        let mut sigma = ComplexMatrix::zeros(m, n);
        for (i, &s) in self.singular_values.iter().enumerate() {
            sigma[(i, i)] = C64::new(s, 0.0);
        }
        &self.u * sigma * self.v.adjoint()
    }
}

pub fn sorted_svd(a: &ComplexMatrix) -> Result<SortedSvd> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(OiaError::InvalidArgument {
            op: "sorted_svd",
            reason: format!("empty {m}x{n} operand"),
        });
    }
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(OiaError::SvdFailure { op: "sorted_svd" })?;
    let u_thin = svd.u.ok_or(OiaError::SvdFailure { op: "sorted_svd" })?;
    let v_t = svd.v_t.ok_or(OiaError::SvdFailure { op: "sorted_svd" })?;
    let values = svd.singular_values;

    let k = values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));

    let mut u_sorted = ComplexMatrix::zeros(m, k);
    let mut v_sorted = ComplexMatrix::zeros(n, k);
    for (dst, &src) in order.iter().enumerate() {
        u_sorted.set_column(dst, &u_thin.column(src));
        v_sorted.set_column(dst, &v_t.row(src).adjoint());
    }
    let singular_values = order.iter().map(|&i| values[i].max(0.0)).collect();

    Ok(SortedSvd {
        u: complete_orthonormal(&u_sorted),
        singular_values,
        v: complete_orthonormal(&v_sorted),
    })
}

/// Singular values in decreasing order, without the singular vectors.
pub fn singular_values_sorted(a: &ComplexMatrix) -> Result<Vec<f64>> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(OiaError::InvalidArgument {
            op: "singular_values_sorted",
            reason: format!("empty {m}x{n} operand"),
        });
    }
    let svd = a
        .clone()
        .try_svd(false, false, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(OiaError::SvdFailure { op: "singular_values_sorted" })?;
    let mut values: Vec<f64> = svd.singular_values.iter().map(|s| s.max(0.0)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Extends the orthonormal columns of `q` (m x k) to an m x m unitary matrix
/// whose leading k columns are `q` itself.
pub fn complete_orthonormal(q: &ComplexMatrix) -> ComplexMatrix {
    let (m, k) = q.shape();
    if k >= m {
        return q.clone();
    }
    // Householder QR of [q | I]: the trailing m - k columns of the full Q
    // are orthogonal to range(q) to working precision.
    let mut aug = ComplexMatrix::zeros(m, k + m);
    aug.view_mut((0, 0), (m, k)).copy_from(q);
    aug.view_mut((0, k), (m, m)).fill_with_identity();
    let full_q = aug.qr().q();
    let mut out = ComplexMatrix::zeros(m, m);
    out.view_mut((0, 0), (m, k)).copy_from(q);
    out.view_mut((0, k), (m, m - k))
        .copy_from(&full_q.view((0, k), (m, m - k)));
    out
}

/// Orthonormal basis of `Ker(a)` taken from the trailing right singular
/// vectors. Returns an `n x 0` matrix when `a` has full column rank.
pub fn null_space_basis(a: &ComplexMatrix, rank_tol: f64) -> Result<ComplexMatrix> {
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    if m == 0 {
        return Ok(ComplexMatrix::identity(n, n));
    }
    let svd = sorted_svd(a)?;
    let rank = svd.rank(rank_tol);
    Ok(svd.v.columns(rank, n - rank).into_owned())
}

fn hermitian_part(q: &ComplexMatrix) -> ComplexMatrix {
    (q + q.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues (ascending) of a Hermitian matrix, without eigenvectors.
pub fn hermitian_eigenvalues(q: &ComplexMatrix, op: &'static str) -> Result<Vec<f64>> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(OiaError::shape(op, "square matrix", format!("{}x{}", n, q.ncols())));
    }
    let mut values: Vec<f64> = hermitian_part(q).symmetric_eigenvalues().iter().copied().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(OiaError::InvalidArgument {
            op,
            reason: "non-finite eigenvalue".into(),
        });
    }
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Eigenvalues (ascending) and eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(q: &ComplexMatrix, op: &'static str) -> Result<(Vec<f64>, ComplexMatrix)> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(OiaError::shape(op, "square matrix", format!("{}x{}", n, q.ncols())));
    }
    let eig = SymmetricEigen::try_new(hermitian_part(q), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(OiaError::SvdFailure { op })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vecs = ComplexMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((order.iter().map(|&i| eig.eigenvalues[i]).collect(), vecs))
}

/// Hermitian `S = Q^{-1/2}`, so that `S Q S = I`.
pub fn hermitian_inv_sqrt(q: &ComplexMatrix) -> Result<ComplexMatrix> {
    const OP: &str = "hermitian_inv_sqrt";
    let n = q.nrows();
    let (values, vecs) = hermitian_eigen(q, OP)?;
    let largest = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let floor = n as f64 * f64::EPSILON * largest;
    if let Some(&min) = values.first() {
        if !(min > floor) {
            return Err(OiaError::NotPositiveDefinite {
                op: OP,
                min_eigenvalue: min,
            });
        }
    }
    let scale = DVector::from_iterator(n, values.iter().map(|v| C64::new(v.sqrt().recip(), 0.0)));
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    Ok(hermitian_part(&(scaled * vecs.adjoint())))
}

/// Natural log-determinant of a Hermitian positive definite matrix.
pub fn ln_det_hpd(a: &ComplexMatrix, op: &'static str) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = hermitian_part(a).cholesky().ok_or_else(|| {
        let min_eigenvalue = hermitian_eigen(a, op)
            .ok()
            .and_then(|(v, _)| v.first().copied())
            .unwrap_or(f64::NAN);
        OiaError::NotPositiveDefinite { op, min_eigenvalue }
    })?;
    let l = chol.l_dirty();
    Ok((0..a.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum())
}

/// `ln |det(a)|` for a general square matrix via LU.
pub fn ln_abs_det(a: &ComplexMatrix) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone().lu().determinant().norm().ln()
}

pub fn frobenius(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `||A^H A - I||_F` for a matrix with (supposedly) orthonormal columns.
pub fn orthonormality_residual(a: &ComplexMatrix) -> f64 {
    let k = a.ncols();
    frobenius(&(a.adjoint() * a - ComplexMatrix::identity(k, k)))
}

pub fn real_diag(values: &[f64]) -> ComplexMatrix {
    ComplexMatrix::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| C64::new(v, 0.0)),
    ))
}

pub fn is_finite(a: &ComplexMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
