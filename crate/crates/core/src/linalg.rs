//! Small dense complex helpers shared by the solver modules.

use nalgebra::linalg::SymmetricEigen;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Sub-matrix picking `rows` and `cols` (0-based) in the given order.
pub fn select(a: &CMat, rows: &[usize], cols: &[usize]) -> CMat {
    CMat::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// Hermitian part `(A + A^H) / 2`.
pub fn herm(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn trace(a: &CMat) -> Complex64 {
    a.diagonal().iter().sum()
}

/// `Tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> Complex64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = ZERO;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Real inner product `Re Tr(A^H B)` on the embedding space.
pub fn re_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// Frobenius distance of `A^H A` from the identity.
pub fn orthonormality_residual(a: &CMat) -> f64 {
    let n = a.ncols();
    (a.adjoint() * a - CMat::identity(n, n)).norm()
}

/// Nearest matrix with orthonormal columns, `U V^H`.
///
/// Well-conditioned inputs (condition number below 10, the usual case for a
/// retraction) use `A (A^H A)^{-1/2}` from an `n × n` Hermitian
/// eigendecomposition; others fall back to a thin SVD. Returns the smallest
/// singular value alongside the factor so callers can detect rank deficiency.
pub fn polar_factor(a: &CMat) -> Result<(CMat, f64)> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("non-finite entry in polar factorization".into()));
    }
    let eig = SymmetricEigen::new(herm(&(a.adjoint() * a)));
    let lmin = eig.eigenvalues.min();
    let lmax = eig.eigenvalues.max();
    if lmin > 1e-2 * lmax && lmin > 0.0 {
        let v = &eig.eigenvectors;
        let scaled = CMat::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] / eig.eigenvalues[j].sqrt());
        return Ok((a * scaled * v.adjoint(), lmin.sqrt()));
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("SVD did not return U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return V^H".into()))?;
    let sigma_min = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok((u * v_t, sigma_min))
}

pub fn is_finite(a: &CMat) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}
