use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{validate_ranks, Core, TtTensor};
use crate::error::{Result, TomoError};
use crate::linalg::svd_sorted;
use crate::C64;

/// Norms at or below this are treated as the zero operator.
pub(crate) const ZERO_NORM: f64 = 1e-14;

/// How a TT-SVD sweep truncates each unfolding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// Cap each bond rank `r_1..r_{n-1}`.
    Ranks(Vec<usize>),
    /// Relative Frobenius error budget for the whole sweep.
    Tolerance(f64),
}

impl Truncation {
    pub(crate) fn validate(&self, n: usize, d: usize) -> Result<()> {
        match self {
            Truncation::Ranks(r) => validate_ranks(n, d, r),
            Truncation::Tolerance(t) if !(*t >= 0.0) || !t.is_finite() => {
                Err(TomoError::InvalidInput(format!("truncation tolerance {} must be >= 0", t)))
            }
            Truncation::Tolerance(_) => Ok(()),
        }
    }
}

/// Per-cut truncation rule after the global budget has been resolved.
pub(crate) enum CutRule<'a> {
    Ranks(&'a [usize]),
    Discard(f64),
}

impl CutRule<'_> {
    /// Number of singular values kept at cut `l` (zero-based).
    pub(crate) fn keep(&self, l: usize, s: &[f64]) -> usize {
        match self {
            CutRule::Ranks(r) => r[l].min(s.len()).max(1),
            CutRule::Discard(delta) => {
                let budget = delta * delta;
                let mut tail = 0.0;
                let mut k = s.len();
                while k > 1 && tail + s[k - 1] * s[k - 1] <= budget {
                    tail += s[k - 1] * s[k - 1];
                    k -= 1;
                }
                k
            }
        }
    }

    pub(crate) fn resolve<'a>(trunc: &'a Truncation, n: usize, norm: f64) -> CutRule<'a> {
        match trunc {
            Truncation::Ranks(r) => CutRule::Ranks(r),
            Truncation::Tolerance(t) => {
                let cuts = n.saturating_sub(1).max(1) as f64;
                CutRule::Discard(t * norm / cuts.sqrt())
            }
        }
    }
}

/// Truncate the left unfolding `m` (rows `(left, phys)`): returns the new left
/// core and the `k x cols` remainder `S V^H`.
pub(crate) fn truncate_left(
    m: DMatrix<C64>,
    left: usize,
    phys: usize,
    rule: &CutRule<'_>,
    cut: usize,
) -> Result<(Core, DMatrix<C64>)> {
    let svd = svd_sorted(m)?;
    let k = rule.keep(cut, &svd.s);
    let u = svd.u.columns(0, k).into_owned();
    let rest = DMatrix::from_fn(k, svd.vt.ncols(), |i, j| svd.vt[(i, j)] * svd.s[i]);
    Ok((Core::from_left_unfolding(&u, left, phys), rest))
}

impl TtTensor {
    /// TT rounding: right-to-left orthogonalization, then a left-to-right
    /// truncated-SVD sweep. Output ranks never exceed the requested ones.
    pub fn round(&self, trunc: &Truncation) -> Result<TtTensor> {
        trunc.validate(self.n(), self.d)?;
        let n = self.n();
        let mut t = self.right_orthogonalized();
        let norm = t.cores[0].frobenius_norm();
        if norm <= ZERO_NORM {
            return Ok(TtTensor::zero(n, self.d));
        }
        let rule = CutRule::resolve(trunc, n, norm);
        for l in 0..n - 1 {
            let (left, phys) = (t.cores[l].left, t.cores[l].phys);
            let (core, rest) = truncate_left(t.cores[l].left_unfolding(), left, phys, &rule, l)?;
            t.cores[l] = core;
            t.cores[l + 1] = t.cores[l + 1].left_mul(&rest);
        }
        Ok(t)
    }
}
