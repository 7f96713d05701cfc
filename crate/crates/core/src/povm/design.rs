use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::linalg::{hermitian_eigenvalues, hermitian_eigh, spectral_norm};
use crate::C64;

/// Largest `dim^s` for which moment operators are formed (about 10^6 entries).
pub const MAX_MOMENT_DIM: usize = 1024;

/// Defect of a vector set from an exact design at one moment order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub s: usize,
    /// `C(dim+s-1, s)` times the largest eigenvalue magnitude of the moment
    /// deviation compressed to the symmetric subspace.
    pub delta_lower: f64,
    /// `C(dim+s-1, s)` times the spectral norm of the full moment deviation.
    pub delta_upper: f64,
    pub method: String,
}

pub fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn moment_side(dim: usize, s: usize) -> Result<usize> {
    let side = dim
        .checked_pow(s as u32)
        .filter(|&x| x <= MAX_MOMENT_DIM)
        .ok_or_else(|| TomoError::SizeCap(format!("dim^s = {}^{} exceeds {}", dim, s, MAX_MOMENT_DIM)))?;
    Ok(side)
}

fn permutations(s: usize) -> Vec<Vec<usize>> {
    if s == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(s - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, s - 1);
            out.push(q);
        }
    }
    out
}

/// Projector onto the symmetric subspace of `(C^dim)^{(x)s}`: the average of
/// all `s!` permutation operators. Its trace is `C(dim+s-1, s)`.
pub fn sym_projector(dim: usize, s: usize) -> Result<DMatrix<C64>> {
    let side = moment_side(dim, s)?;
    let perms = permutations(s);
    let w = 1.0 / perms.len() as f64;
    let mut p = DMatrix::<C64>::zeros(side, side);
    let mut digits = vec![0usize; s];
    for idx in 0..side {
        let mut rem = idx;
        for slot in digits.iter_mut().rev() {
            *slot = rem % dim;
            rem /= dim;
        }
        for perm in &perms {
            let target = perm.iter().fold(0, |acc, &k| acc * dim + digits[k]);
            p[(target, idx)] += C64::new(w, 0.0);
        }
    }
    Ok(p)
}

fn tensor_power(w: &DVector<C64>, s: usize) -> DVector<C64> {
    let mut acc = DVector::from_element(1, C64::new(1.0, 0.0));
    for _ in 0..s {
        acc = acc.kronecker(w);
    }
    acc
}

/// Compare `(1/K) sum_k (w_k w_k^H)^{(x)s}` with the Haar moment
/// `P_sym / C(dim+s-1, s)`. Vectors must be unit to `1e-10`.
pub fn check_t_design(vectors: &[DVector<C64>], s: usize) -> Result<DesignReport> {
    let dim = vectors.first().map(|v| v.len()).ok_or_else(|| TomoError::InvalidInput("empty vector set".into()))?;
    if s == 0 {
        return Err(TomoError::InvalidInput("moment order must be >= 1".into()));
    }
    for v in vectors {
        if v.len() != dim {
            return Err(TomoError::InvalidInput("vectors differ in length".into()));
        }
        if (v.norm() - 1.0).abs() > 1e-10 {
            return Err(TomoError::InvalidInput(format!("vector norm {} is not 1", v.norm())));
        }
    }
    let side = moment_side(dim, s)?;
    let mut moment = DMatrix::<C64>::zeros(side, side);
    for v in vectors {
        let u = tensor_power(v, s);
        moment.ger(C64::new(1.0, 0.0), &u, &u.conjugate(), C64::new(1.0, 0.0));
    }
    moment /= C64::new(vectors.len() as f64, 0.0);
    let c = binomial(dim + s - 1, s);
    let proj = sym_projector(dim, s)?;
    let delta = &moment - &proj / C64::new(c, 0.0);
    let delta_upper = c * spectral_norm(&delta);

    let (pvals, pvecs) = hermitian_eigh(&proj);
    let cols: Vec<usize> = (0..pvals.len()).filter(|&i| pvals[i] > 0.5).collect();
    let basis = DMatrix::from_fn(side, cols.len(), |i, j| pvecs[(i, cols[j])]);
    let compressed = basis.adjoint() * &delta * &basis;
    let compressed = (&compressed + compressed.adjoint()) * C64::new(0.5, 0.0);
    let ev = hermitian_eigenvalues(&compressed);
    let extreme = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(DesignReport {
        s,
        delta_lower: c * extreme,
        delta_upper,
        method: "moment-operator deviation, spectral norm".into(),
    })
}
