use nalgebra::DMatrix;

use crate::error::{Result, TomoError};
use crate::linalg::hermitian_eigh;
use crate::tt::{DenseOperator, Truncation, TtTensor};
use crate::C64;

/// Smallest trace magnitude accepted by the normalization step.
const MIN_TRACE: f64 = 1e-8;

/// Symmetrize and divide by the trace. Input must already have the target ranks.
fn symmetrize_normalize(x: TtTensor, ranks: &[usize]) -> Result<TtTensor> {
    let herm = x.add(&x.adjoint())?.scale_real(0.5).round(&Truncation::Ranks(ranks.to_vec()))?;
    let t = herm.trace();
    if !(t.norm() >= MIN_TRACE) {
        return Err(TomoError::DegenerateTrace(t.norm()));
    }
    Ok(herm.scale_real(1.0 / t.re))
}

/// Two-step projection: TT rounding to `ranks`, Hermitian symmetrization,
/// then division by the trace.
pub fn project_mpo(raw: &TtTensor, ranks: &[usize]) -> Result<TtTensor> {
    let rounded = raw.round(&Truncation::Ranks(ranks.to_vec()))?;
    symmetrize_normalize(rounded, ranks)
}

/// [`project_mpo`] for a dense input: TT-SVD to `ranks`, then the same steps.
pub fn project_dense(raw: &DenseOperator, ranks: &[usize]) -> Result<TtTensor> {
    let tt = TtTensor::from_dense(raw, &Truncation::Ranks(ranks.to_vec()))?;
    symmetrize_normalize(tt, ranks)
}

/// Euclidean projection of `v` onto the probability simplex.
pub fn simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        acc += x;
        let t = (acc - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Nearest density operator in Frobenius norm: eigenvalues projected onto the simplex.
pub fn psd_project(state: &DenseOperator) -> Result<DenseOperator> {
    let dev = state.hermitian_deviation();
    if dev > 1e-10 {
        return Err(TomoError::NotHermitian(dev));
    }
    let m = state.matrix();
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let (vals, vecs) = hermitian_eigh(&herm);
    let proj = simplex_projection(&vals);
    let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        proj.len(),
        proj.iter().map(|&x| C64::new(x, 0.0)),
    ));
    DenseOperator::new(state.n(), state.d(), &vecs * diag * vecs.adjoint())
}

/// `||a - b||_F`, evaluated on the exact difference in orthogonalized form.
pub fn recovery_error(a: &TtTensor, b: &TtTensor) -> Result<f64> {
    Ok(a.sub(b)?.norm())
}
