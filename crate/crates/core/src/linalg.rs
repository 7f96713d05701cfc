//! Thin wrappers over nalgebra's dense factorizations.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, TomoError};
use crate::C64;

pub(crate) struct Svd {
    pub u: DMatrix<C64>,
    pub s: Vec<f64>,
    pub vt: DMatrix<C64>,
}

/// Thin SVD with singular values in descending order. The sort is stable, so
/// equal singular values keep the column order the factorization produced.
///
/// Backed by faer: nalgebra's complex SVD returns inaccurate factors for some
/// rank-deficient inputs.
pub(crate) fn svd_sorted(m: DMatrix<C64>) -> Result<Svd> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(TomoError::Numerical("SVD of an empty matrix".into()));
    }
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TomoError::Numerical("SVD of a non-finite matrix".into()));
    }
    let fm = faer::Mat::<faer::c64>::from_fn(rows, cols, |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    let svd = fm.thin_svd().map_err(|e| TomoError::Numerical(format!("SVD failed: {:?}", e)))?;
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let k = rows.min(cols);
    let vals: Vec<f64> = (0..k).map(|i| fs[i].re).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap_or(std::cmp::Ordering::Equal));
    let u = DMatrix::from_fn(rows, k, |i, j| {
        let z = fu[(i, order[j])];
        C64::new(z.re, z.im)
    });
    let vt = DMatrix::from_fn(k, cols, |i, j| {
        let z = fv[(j, order[i])];
        C64::new(z.re, -z.im)
    });
    let s = order.iter().map(|&i| vals[i]).collect();
    Ok(Svd { u, s, vt })
}

/// Thin QR: returns (Q, R) with Q of shape rows x min(rows, cols).
pub(crate) fn thin_qr(m: DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let qr = m.qr();
    (qr.q(), qr.r())
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub(crate) fn hermitian_eigh(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = SymmetricEigen::new(m.clone());
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap_or(std::cmp::Ordering::Equal));
    let vecs = DMatrix::from_fn(m.nrows(), vals.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (order.iter().map(|&i| vals[i]).collect(), vecs)
}

pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut vals: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

pub(crate) fn spectral_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let fm = faer::Mat::<faer::c64>::from_fn(m.nrows(), m.ncols(), |i, j| faer::c64::new(m[(i, j)].re, m[(i, j)].im));
    fm.singular_values().map(|s| s.iter().fold(0.0_f64, |acc, &v| acc.max(v))).unwrap_or(f64::NAN)
}

pub(crate) fn max_abs_entry(m: &DMatrix<C64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Frobenius inner product trace(A^H B).
pub(crate) fn frobenius_inner(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub(crate) fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}
