use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{DensePovm, LocalPovm};
use crate::error::{Result, TomoError};
use crate::linalg::frobenius_inner;
use crate::C64;

/// The qubit SIC-POVM: `(1/2)|0><0|` and `(1/2)|psi_m><psi_m|` with
/// `|psi_m> = |0>/sqrt(3) + sqrt(2/3) e^{i 2 pi m / 3} |1>`, `m = 0, 1, 2`.
///
/// Every element has trace 1/2; the last three have diagonal (1/6, 1/3) and
/// off-diagonals `(sqrt(2)/6) e^{-+ i 2 pi m / 3}`.
pub fn sic_qubit() -> LocalPovm {
    let mut elements = vec![DMatrix::from_row_slice(
        2,
        2,
        &[C64::new(0.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
    )];
    let off = 2f64.sqrt() / 6.0;
    for m in 0..3 {
        let phase = C64::from_polar(off, 2.0 * PI * m as f64 / 3.0);
        elements.push(DMatrix::from_row_slice(
            2,
            2,
            &[C64::new(1.0 / 6.0, 0.0), phase.conj(), phase, C64::new(1.0 / 3.0, 0.0)],
        ));
    }
    LocalPovm::new(elements).expect("qubit SIC is a valid POVM")
}

/// Largest dimension accepted by the Weyl-Heisenberg construction.
pub const MAX_WH_DIM: usize = 16;

/// Known Weyl-Heisenberg SIC fiducials for small dimensions.
pub fn bundled_fiducial(d: usize) -> Option<DVector<C64>> {
    match d {
        2 => {
            let a = ((3.0 + 3f64.sqrt()) / 6.0).sqrt();
            let b = ((3.0 - 3f64.sqrt()) / 6.0).sqrt();
            Some(DVector::from_vec(vec![C64::new(a, 0.0), C64::from_polar(b, PI / 4.0)]))
        }
        3 => {
            let h = 0.5f64.sqrt();
            Some(DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(h, 0.0), C64::new(-h, 0.0)]))
        }
        _ => None,
    }
}

/// Orbit of `fiducial` under the Weyl-Heisenberg group: elements
/// `(1/d) |psi_ab><psi_ab|` with `psi_ab = X^a Z^b fiducial`, ordered `a`-major.
/// Whether the result is a SIC is up to the fiducial; see [`check_sic`].
pub fn wh_sic_from_fiducial(d: usize, fiducial: &DVector<C64>) -> Result<DensePovm> {
    if d < 2 || d > MAX_WH_DIM {
        return Err(TomoError::InvalidInput(format!("dimension {} outside [2, {}]", d, MAX_WH_DIM)));
    }
    if fiducial.len() != d {
        return Err(TomoError::ShapeMismatch(format!("fiducial has length {}, expected {}", fiducial.len(), d)));
    }
    if (fiducial.norm() - 1.0).abs() > 1e-12 {
        return Err(TomoError::InvalidInput(format!("fiducial norm {} is not 1", fiducial.norm())));
    }
    let mut vectors = Vec::with_capacity(d * d);
    for a in 0..d {
        for b in 0..d {
            let v = DVector::from_fn(d, |j, _| {
                // (X^a Z^b psi)_j = omega^{b (j - a)} psi_{j - a}
                let src = (j + d - a) % d;
                C64::from_polar(1.0, 2.0 * PI * ((b * src) % d) as f64 / d as f64) * fiducial[src]
            });
            vectors.push(v);
        }
    }
    DensePovm::from_vectors(vectors)
}

/// Deviations of a POVM from the SIC trace and inner-product table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SicReport {
    pub count: usize,
    pub expected_count: usize,
    pub trace_dev: f64,
    pub self_dev: f64,
    pub cross_dev: f64,
}

impl SicReport {
    pub fn count_ok(&self) -> bool {
        self.count == self.expected_count
    }

    pub fn max_dev(&self) -> f64 {
        self.trace_dev.max(self.self_dev).max(self.cross_dev)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.count_ok() && self.max_dev() <= tol
    }
}

/// Compare against `trace = 1/dim`, `<A_k, A_k> = 1/dim^2`,
/// `<A_k, A_j> = 1/(dim^2 (dim + 1))`. A wrong element count is reported, not fatal.
pub fn check_sic(povm: &DensePovm) -> SicReport {
    let dim = povm.dim() as f64;
    let els = povm.elements();
    let t_trace = 1.0 / dim;
    let t_self = 1.0 / (dim * dim);
    let t_cross = 1.0 / (dim * dim * (dim + 1.0));
    let mut report = SicReport {
        count: els.len(),
        expected_count: povm.dim() * povm.dim(),
        trace_dev: 0.0,
        self_dev: 0.0,
        cross_dev: 0.0,
    };
    for (k, a) in els.iter().enumerate() {
        report.trace_dev = report.trace_dev.max((a.trace() - C64::new(t_trace, 0.0)).norm());
        for (j, b) in els.iter().enumerate().skip(k) {
            let ip = frobenius_inner(a, b);
            if j == k {
                report.self_dev = report.self_dev.max((ip - C64::new(t_self, 0.0)).norm());
            } else {
                report.cross_dev = report.cross_dev.max((ip - C64::new(t_cross, 0.0)).norm());
            }
        }
    }
    report
}

/// Dual frame of a SIC: `dual_k = dim (dim + 1) A_k - I`, so that
/// `rho = sum_k <A_k, rho> dual_k` and `<A_k, dual_j> = delta_kj`.
pub fn dual_basis_sic(povm: &DensePovm) -> Result<Vec<DMatrix<C64>>> {
    let report = check_sic(povm);
    if !report.passes(1e-8) {
        return Err(TomoError::InvalidPovm(format!(
            "not a SIC (count {}/{}, max deviation {:.3e})",
            report.count,
            report.expected_count,
            report.max_dev()
        )));
    }
    let dim = povm.dim();
    let scale = C64::new((dim * (dim + 1)) as f64, 0.0);
    let eye = DMatrix::<C64>::identity(dim, dim);
    Ok(povm.elements().iter().map(|a| a * scale - &eye).collect())
}
