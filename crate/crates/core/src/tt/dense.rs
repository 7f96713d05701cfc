use nalgebra::DMatrix;

use super::round::{truncate_left, CutRule, ZERO_NORM};
use super::{unfuse, Core, Truncation, TtTensor};
use crate::error::{Result, TomoError};
use crate::linalg::max_abs_entry;
use crate::C64;

/// Largest site count for which dense `d^n x d^n` operators are materialized.
pub const DEFAULT_MAX_DENSE_SITES: usize = 10;

/// A full `d^n x d^n` operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    n: usize,
    d: usize,
    mat: DMatrix<C64>,
}

impl DenseOperator {
    pub fn new(n: usize, d: usize, mat: DMatrix<C64>) -> Result<Self> {
        Self::new_with_limit(n, d, mat, DEFAULT_MAX_DENSE_SITES)
    }

    pub fn new_with_limit(n: usize, d: usize, mat: DMatrix<C64>, max_sites: usize) -> Result<Self> {
        if n > max_sites {
            return Err(TomoError::TooLarge { sites: n, limit: max_sites });
        }
        let dim = d.pow(n as u32);
        if mat.nrows() != dim || mat.ncols() != dim {
            return Err(TomoError::ShapeMismatch(format!(
                "matrix is {}x{}, expected {}x{} for n={}, d={}",
                mat.nrows(),
                mat.ncols(),
                dim,
                dim,
                n,
                d
            )));
        }
        Ok(DenseOperator { n, d, mat })
    }

    /// Construct and verify Hermiticity to 1e-12 in max-entry norm.
    pub fn new_hermitian(n: usize, d: usize, mat: DMatrix<C64>) -> Result<Self> {
        let op = Self::new(n, d, mat)?;
        let dev = op.hermitian_deviation();
        if dev > 1e-12 {
            return Err(TomoError::NotHermitian(dev));
        }
        Ok(op)
    }

    pub fn maximally_mixed(n: usize, d: usize) -> Result<Self> {
        let dim = d.pow(n as u32);
        Self::new(n, d, DMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn hermitian_deviation(&self) -> f64 {
        max_abs_entry(&(&self.mat - self.mat.adjoint()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    /// Split a big-endian multi-index into per-site digits.
    pub(crate) fn digits(mut idx: usize, n: usize, d: usize) -> Vec<usize> {
        let mut out = vec![0; n];
        for slot in out.iter_mut().rev() {
            *slot = idx % d;
            idx /= d;
        }
        out
    }

    /// Entries of the fused order-`n` tensor in row-major order of `(s_1, ..., s_n)`.
    pub(crate) fn fused_entries(&self) -> Vec<C64> {
        let (n, d) = (self.n, self.d);
        let d2 = d * d;
        let total = d2.pow(n as u32);
        let mut out = vec![C64::new(0.0, 0.0); total];
        for (flat, slot) in out.iter_mut().enumerate() {
            let s = Self::digits(flat, n, d2);
            let (mut row, mut col) = (0usize, 0usize);
            for &sl in &s {
                let (i, j) = unfuse(sl, d);
                row = row * d + i;
                col = col * d + j;
            }
            *slot = self.mat[(row, col)];
        }
        out
    }

    /// Inverse of [`Self::fused_entries`].
    pub(crate) fn from_fused_entries(n: usize, d: usize, x: &[C64]) -> Result<Self> {
        let d2 = d * d;
        let dim = d.pow(n as u32);
        let mut mat = DMatrix::zeros(dim, dim);
        for (flat, v) in x.iter().enumerate() {
            let s = Self::digits(flat, n, d2);
            let (mut row, mut col) = (0usize, 0usize);
            for &sl in &s {
                let (i, j) = unfuse(sl, d);
                row = row * d + i;
                col = col * d + j;
            }
            mat[(row, col)] = *v;
        }
        Self::new(n, d, mat)
    }

    /// Apply a `d^2 x d^2` linear map to the fused physical index of every site.
    pub(crate) fn map_sites(&self, maps: &[DMatrix<C64>]) -> Result<Self> {
        let (n, d) = (self.n, self.d);
        let d2 = d * d;
        let mut x = self.fused_entries();
        for (l, map) in maps.iter().enumerate() {
            let outer = d2.pow(l as u32);
            let inner = d2.pow((n - l - 1) as u32);
            let mut y = vec![C64::new(0.0, 0.0); x.len()];
            for o in 0..outer {
                for t in 0..d2 {
                    let dst = (o * d2 + t) * inner;
                    for s in 0..d2 {
                        let w = map[(t, s)];
                        if w == C64::new(0.0, 0.0) {
                            continue;
                        }
                        let src = (o * d2 + s) * inner;
                        for q in 0..inner {
                            y[dst + q] += w * x[src + q];
                        }
                    }
                }
            }
            x = y;
        }
        Self::from_fused_entries(n, d, &x)
    }

    /// The `l`-th unfolding `X^<l>` of the fused tensor, rows `(s_1..s_l)`.
    pub fn unfolding(&self, l: usize) -> DMatrix<C64> {
        let d2 = self.d * self.d;
        let rows = d2.pow(l as u32);
        let cols = d2.pow((self.n - l) as u32);
        let x = self.fused_entries();
        DMatrix::from_fn(rows, cols, |r, c| x[r * cols + c])
    }
}

impl TtTensor {
    /// TT-SVD of a dense operator: sequential truncated SVDs, left to right.
    pub fn from_dense(dense: &DenseOperator, trunc: &Truncation) -> Result<TtTensor> {
        let (n, d) = (dense.n, dense.d);
        trunc.validate(n, d)?;
        let norm = dense.frobenius_norm();
        if norm <= ZERO_NORM {
            return Ok(TtTensor::zero(n, d));
        }
        let d2 = d * d;
        let rule = CutRule::resolve(trunc, n, norm);
        let x = dense.fused_entries();
        let mut cols = x.len() / d2;
        let mut rem = DMatrix::from_fn(d2, cols, |r, c| x[r * cols + c]);
        let mut left = 1usize;
        let mut cores = Vec::with_capacity(n);
        for l in 0..n - 1 {
            let (core, rest) = truncate_left(rem, left, d2, &rule, l)?;
            let k = core.right();
            cores.push(core);
            let next_cols = cols / d2;
            rem = DMatrix::from_fn(k * d2, next_cols, |r, c| {
                let (kk, s) = (r / d2, r % d2);
                rest[(kk, s * next_cols + c)]
            });
            left = k;
            cols = next_cols;
        }
        cores.push(Core::from_left_unfolding(&rem, left, d2));
        Ok(TtTensor::from_cores_unchecked(d, cores))
    }

    pub fn to_dense(&self) -> Result<DenseOperator> {
        self.to_dense_with_limit(DEFAULT_MAX_DENSE_SITES)
    }

    /// Contract the cores into a dense operator.
    pub fn to_dense_with_limit(&self, max_sites: usize) -> Result<DenseOperator> {
        let (n, d) = (self.n(), self.d());
        if n > max_sites {
            return Err(TomoError::TooLarge { sites: n, limit: max_sites });
        }
        let d2 = d * d;
        // acc: rows = fused prefix (s_1..s_l), cols = current bond
        let mut acc = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for core in self.cores() {
            let r = core.right_unfolding();
            let prod = &acc * r;
            let rows = acc.nrows();
            let right = core.right();
            acc = DMatrix::from_fn(rows * d2, right, |row, b| {
                let (p, s) = (row / d2, row % d2);
                prod[(p, s * right + b)]
            });
        }
        let dim = d.pow(n as u32);
        let mut mat = DMatrix::zeros(dim, dim);
        for flat in 0..acc.nrows() {
            let s = DenseOperator::digits(flat, n, d2);
            let (mut row, mut col) = (0usize, 0usize);
            for &sl in &s {
                let (i, j) = unfuse(sl, d);
                row = row * d + i;
                col = col * d + j;
            }
            mat[(row, col)] = acc[(flat, 0)];
        }
        DenseOperator::new_with_limit(n, d, mat, max_sites)
    }
}
