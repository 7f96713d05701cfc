//! Tensor-train / matrix product operator representation.
//!
//! An operator on `n` sites of local dimension `d` is stored as `n` three-way
//! cores of shape `r[l-1] x d^2 x r[l]` with `r[0] = r[n] = 1`. The physical
//! index of a core fuses a row index `i` and a column index `j` of the local
//! operator as `s = i + d * j` (zero-based), so the operator element
//!
//! ```text
//! rho(i_1..i_n, j_1..j_n) = X_1[s_1] X_2[s_2] ... X_n[s_n]
//! ```
//!
//! is a product of `r[l-1] x r[l]` matrices. Row and column multi-indices of the
//! dense operator are big-endian (site 1 is most significant).

mod dense;
mod round;

pub use dense::{DenseOperator, DEFAULT_MAX_DENSE_SITES};
pub use round::Truncation;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::C64;

/// One TT core with layout `(left, phys, right)`, right index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    phys: usize,
    right: usize,
    data: Vec<C64>,
}

impl Core {
    pub fn zeros(left: usize, phys: usize, right: usize) -> Self {
        Core { left, phys, right, data: vec![C64::new(0.0, 0.0); left * phys * right] }
    }

    pub fn from_vec(left: usize, phys: usize, right: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != left * phys * right {
            return Err(TomoError::ShapeMismatch(format!(
                "core data has {} entries, expected {}x{}x{}",
                data.len(),
                left,
                phys,
                right
            )));
        }
        Ok(Core { left, phys, right, data })
    }

    pub fn from_fn(left: usize, phys: usize, right: usize, mut f: impl FnMut(usize, usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(left * phys * right);
        for a in 0..left {
            for s in 0..phys {
                for b in 0..right {
                    data.push(f(a, s, b));
                }
            }
        }
        Core { left, phys, right, data }
    }

    #[inline]
    pub fn left(&self) -> usize {
        self.left
    }

    #[inline]
    pub fn phys(&self) -> usize {
        self.phys
    }

    #[inline]
    pub fn right(&self) -> usize {
        self.right
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    fn idx(&self, a: usize, s: usize, b: usize) -> usize {
        (a * self.phys + s) * self.right + b
    }

    #[inline]
    pub fn get(&self, a: usize, s: usize, b: usize) -> C64 {
        self.data[self.idx(a, s, b)]
    }

    #[inline]
    pub fn set(&mut self, a: usize, s: usize, b: usize, v: C64) {
        let i = self.idx(a, s, b);
        self.data[i] = v;
    }

    /// The `left x right` matrix at physical index `s`.
    pub fn slice(&self, s: usize) -> DMatrix<C64> {
        DMatrix::from_fn(self.left, self.right, |a, b| self.get(a, s, b))
    }

    /// Matrix with rows `(a, s)` and columns `b`.
    pub(crate) fn left_unfolding(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.left * self.phys, self.right, |row, b| {
            self.data[row * self.right + b]
        })
    }

    /// Matrix with rows `a` and columns `(s, b)`.
    pub(crate) fn right_unfolding(&self) -> DMatrix<C64> {
        let cols = self.phys * self.right;
        DMatrix::from_fn(self.left, cols, |a, col| self.data[a * cols + col])
    }

    pub(crate) fn from_left_unfolding(m: &DMatrix<C64>, left: usize, phys: usize) -> Self {
        let right = m.ncols();
        debug_assert_eq!(m.nrows(), left * phys);
        Core::from_fn(left, phys, right, |a, s, b| m[(a * phys + s, b)])
    }

    pub(crate) fn from_right_unfolding(m: &DMatrix<C64>, phys: usize, right: usize) -> Self {
        let left = m.nrows();
        debug_assert_eq!(m.ncols(), phys * right);
        Core::from_fn(left, phys, right, |a, s, b| m[(a, s * right + b)])
    }

    /// Apply a linear map on the physical index: `out[a, t, b] = sum_s map[t, s] core[a, s, b]`.
    pub(crate) fn map_physical(&self, map: &DMatrix<C64>) -> Core {
        assert_eq!(map.ncols(), self.phys);
        let phys_out = map.nrows();
        let mut out = Core::zeros(self.left, phys_out, self.right);
        for a in 0..self.left {
            for t in 0..phys_out {
                for s in 0..self.phys {
                    let w = map[(t, s)];
                    if w == C64::new(0.0, 0.0) {
                        continue;
                    }
                    for b in 0..self.right {
                        let v = out.get(a, t, b) + w * self.get(a, s, b);
                        out.set(a, t, b, v);
                    }
                }
            }
        }
        out
    }

    /// Contract the physical index with a weight vector: `sum_s w[s] core[:, s, :]`.
    pub(crate) fn contract_physical(&self, w: &[C64]) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.left, self.right);
        for a in 0..self.left {
            for (s, &ws) in w.iter().enumerate() {
                if ws == C64::new(0.0, 0.0) {
                    continue;
                }
                for b in 0..self.right {
                    m[(a, b)] += ws * self.get(a, s, b);
                }
            }
        }
        m
    }

    /// Left-multiply every slice by `m` (`m.ncols() == left`).
    pub(crate) fn left_mul(&self, m: &DMatrix<C64>) -> Core {
        let r = self.right_unfolding();
        Core::from_right_unfolding(&(m * r), self.phys, self.right)
    }

    /// Right-multiply every slice by `m` (`m.nrows() == right`).
    pub(crate) fn right_mul(&self, m: &DMatrix<C64>) -> Core {
        let l = self.left_unfolding();
        Core::from_left_unfolding(&(l * m), self.left, self.phys)
    }

    pub(crate) fn scale_mut(&mut self, c: C64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Fused physical index `s = i + d * j`.
#[inline]
pub fn fuse(i: usize, j: usize, d: usize) -> usize {
    i + d * j
}

/// Inverse of [`fuse`]: returns `(i, j)`.
#[inline]
pub fn unfuse(s: usize, d: usize) -> (usize, usize) {
    (s % d, s / d)
}

/// Fused vector of a `d x d` matrix.
pub fn fuse_matrix(m: &DMatrix<C64>) -> Vec<C64> {
    let d = m.nrows();
    (0..d * d).map(|s| {
        let (i, j) = unfuse(s, d);
        m[(i, j)]
    })
    .collect()
}

/// Largest admissible bond rank at cut `l` (1-based cut between sites `l` and `l+1`).
pub fn max_rank_at_cut(n: usize, d: usize, l: usize) -> usize {
    let d2 = d * d;
    let left = l.min(n - l);
    d2.checked_pow(left as u32).unwrap_or(usize::MAX)
}

pub(crate) fn validate_ranks(n: usize, d: usize, ranks: &[usize]) -> Result<()> {
    if ranks.len() + 1 != n {
        return Err(TomoError::InvalidRanks(format!(
            "expected {} bond ranks for {} sites, got {}",
            n.saturating_sub(1),
            n,
            ranks.len()
        )));
    }
    for (l, &r) in ranks.iter().enumerate() {
        let cap = max_rank_at_cut(n, d, l + 1);
        if r == 0 || r > cap {
            return Err(TomoError::InvalidRanks(format!(
                "rank {} at cut {} outside [1, {}]",
                r,
                l + 1,
                cap
            )));
        }
    }
    Ok(())
}

/// A matrix product operator on `n` sites of local dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TtTensor {
    d: usize,
    cores: Vec<Core>,
}

impl TtTensor {
    pub fn new(d: usize, cores: Vec<Core>) -> Result<Self> {
        if d < 2 {
            return Err(TomoError::ShapeMismatch(format!("local dimension {} < 2", d)));
        }
        if cores.is_empty() {
            return Err(TomoError::ShapeMismatch("at least one core required".into()));
        }
        if cores[0].left != 1 || cores[cores.len() - 1].right != 1 {
            return Err(TomoError::ShapeMismatch("boundary ranks must be 1".into()));
        }
        for (l, c) in cores.iter().enumerate() {
            if c.phys != d * d {
                return Err(TomoError::ShapeMismatch(format!(
                    "core {} has physical size {}, expected {}",
                    l,
                    c.phys,
                    d * d
                )));
            }
            if l + 1 < cores.len() && c.right != cores[l + 1].left {
                return Err(TomoError::ShapeMismatch(format!(
                    "rank mismatch between cores {} and {}",
                    l,
                    l + 1
                )));
            }
        }
        Ok(TtTensor { d, cores })
    }

    pub(crate) fn from_cores_unchecked(d: usize, cores: Vec<Core>) -> Self {
        TtTensor { d, cores }
    }

    /// Product operator `ops[0] (x) ops[1] (x) ...`, all bond ranks 1.
    pub fn product(ops: &[DMatrix<C64>]) -> Result<Self> {
        let d = ops.first().map(|m| m.nrows()).unwrap_or(0);
        let cores = ops
            .iter()
            .map(|m| {
                if m.nrows() != d || m.ncols() != d {
                    return Err(TomoError::ShapeMismatch("product factors must be d x d".into()));
                }
                Core::from_vec(1, d * d, 1, fuse_matrix(m))
            })
            .collect::<Result<Vec<_>>>()?;
        TtTensor::new(d, cores)
    }

    /// Random MPO with the given bond ranks; entries have real and imaginary
    /// parts uniform in `[-1, 1]`.
    pub fn random<R: rand::Rng + ?Sized>(d: usize, bond_ranks: &[usize], rng: &mut R) -> Self {
        let n = bond_ranks.len() + 1;
        let mut ranks = vec![1];
        ranks.extend_from_slice(bond_ranks);
        ranks.push(1);
        let cores = (0..n)
            .map(|l| {
                Core::from_fn(ranks[l], d * d, ranks[l + 1], |_, _, _| {
                    C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
                })
            })
            .collect();
        TtTensor { d, cores }
    }

    pub fn zero(n: usize, d: usize) -> Self {
        let cores = (0..n).map(|_| Core::zeros(1, d * d, 1)).collect();
        TtTensor { d, cores }
    }

    pub fn n(&self) -> usize {
        self.cores.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn core(&self, l: usize) -> &Core {
        &self.cores[l]
    }

    /// Full rank vector `(r_0 = 1, r_1, ..., r_n = 1)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![1];
        r.extend(self.cores.iter().map(|c| c.right));
        r
    }

    /// Internal bond ranks `(r_1, ..., r_{n-1})`.
    pub fn bond_ranks(&self) -> Vec<usize> {
        self.cores[..self.n() - 1].iter().map(|c| c.right).collect()
    }

    pub fn max_rank(&self) -> usize {
        self.bond_ranks().into_iter().max().unwrap_or(1)
    }

    fn check_compatible(&self, other: &TtTensor) -> Result<()> {
        if self.n() != other.n() || self.d != other.d {
            return Err(TomoError::ShapeMismatch(format!(
                "(n={}, d={}) vs (n={}, d={})",
                self.n(),
                self.d,
                other.n(),
                other.d
            )));
        }
        Ok(())
    }

    /// Evaluate `rho(i_1..i_n, j_1..j_n)` by multiplying core slices.
    pub fn element(&self, rows: &[usize], cols: &[usize]) -> C64 {
        let mut acc = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for (l, core) in self.cores.iter().enumerate() {
            acc = acc * core.slice(fuse(rows[l], cols[l], self.d));
        }
        acc[(0, 0)]
    }

    /// Frobenius inner product `trace(A^H B)` by left-to-right transfer contraction.
    pub fn inner(&self, other: &TtTensor) -> Result<C64> {
        self.check_compatible(other)?;
        let mut env = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for (a, b) in self.cores.iter().zip(&other.cores) {
            let mut next = DMatrix::zeros(a.right, b.right);
            for s in 0..a.phys {
                let sa = a.slice(s);
                let sb = b.slice(s);
                next += sa.adjoint() * &env * sb;
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    /// Frobenius norm, computed from a right-orthogonalized copy so that
    /// the result is accurate even for nearly cancelling sums.
    pub fn norm(&self) -> f64 {
        let ortho = self.right_orthogonalized();
        ortho.cores[0].frobenius_norm()
    }

    /// `trace(rho)`: each core contracted with the diagonal slices, then chained.
    pub fn trace(&self) -> C64 {
        let diag: Vec<C64> = (0..self.d * self.d)
            .map(|s| {
                let (i, j) = unfuse(s, self.d);
                if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
            })
            .collect();
        let mut acc = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for core in &self.cores {
            acc = acc * core.contract_physical(&diag);
        }
        acc[(0, 0)]
    }

    /// Exact sum with block-structured cores; ranks add.
    pub fn add(&self, other: &TtTensor) -> Result<TtTensor> {
        self.check_compatible(other)?;
        let n = self.n();
        if n == 1 {
            let data = self.cores[0].data.iter().zip(&other.cores[0].data).map(|(x, y)| x + y).collect();
            return Ok(TtTensor { d: self.d, cores: vec![Core::from_vec(1, self.d * self.d, 1, data)?] });
        }
        let cores = self
            .cores
            .iter()
            .zip(&other.cores)
            .enumerate()
            .map(|(l, (a, b))| {
                let phys = a.phys;
                if l == 0 {
                    Core::from_fn(1, phys, a.right + b.right, |_, s, k| {
                        if k < a.right { a.get(0, s, k) } else { b.get(0, s, k - a.right) }
                    })
                } else if l == n - 1 {
                    Core::from_fn(a.left + b.left, phys, 1, |k, s, _| {
                        if k < a.left { a.get(k, s, 0) } else { b.get(k - a.left, s, 0) }
                    })
                } else {
                    Core::from_fn(a.left + b.left, phys, a.right + b.right, |x, s, y| {
                        match (x < a.left, y < a.right) {
                            (true, true) => a.get(x, s, y),
                            (false, false) => b.get(x - a.left, s, y - a.right),
                            _ => C64::new(0.0, 0.0),
                        }
                    })
                }
            })
            .collect();
        Ok(TtTensor { d: self.d, cores })
    }

    /// Sum of many tensors at once (one wide block structure).
    pub fn sum(terms: &[TtTensor]) -> Result<TtTensor> {
        let first = terms
            .first()
            .ok_or_else(|| TomoError::InvalidInput("empty sum".into()))?;
        for t in &terms[1..] {
            first.check_compatible(t)?;
        }
        let n = first.n();
        let d = first.d;
        if terms.len() == 1 {
            return Ok(first.clone());
        }
        if n == 1 {
            let mut data = vec![C64::new(0.0, 0.0); d * d];
            for t in terms {
                for (acc, v) in data.iter_mut().zip(&t.cores[0].data) {
                    *acc += v;
                }
            }
            return Ok(TtTensor { d, cores: vec![Core::from_vec(1, d * d, 1, data)?] });
        }
        let phys = d * d;
        let mut cores = Vec::with_capacity(n);
        for l in 0..n {
            let lefts: Vec<usize> = terms.iter().map(|t| t.cores[l].left).collect();
            let rights: Vec<usize> = terms.iter().map(|t| t.cores[l].right).collect();
            let (tl, tr) = if l == 0 {
                (1, rights.iter().sum())
            } else if l == n - 1 {
                (lefts.iter().sum(), 1)
            } else {
                (lefts.iter().sum(), rights.iter().sum())
            };
            let mut core = Core::zeros(tl, phys, tr);
            let (mut lo, mut ro) = (0usize, 0usize);
            for t in terms {
                let c = &t.cores[l];
                for a in 0..c.left {
                    for s in 0..phys {
                        for b in 0..c.right {
                            let x = if l == 0 { 0 } else { lo + a };
                            let y = if l == n - 1 { 0 } else { ro + b };
                            core.set(x, s, y, c.get(a, s, b));
                        }
                    }
                }
                lo += c.left;
                ro += c.right;
            }
            cores.push(core);
        }
        Ok(TtTensor { d, cores })
    }

    /// Multiply by a scalar (applied to the first core).
    pub fn scale(&self, c: C64) -> TtTensor {
        let mut out = self.clone();
        out.cores[0].scale_mut(c);
        out
    }

    pub fn scale_real(&self, c: f64) -> TtTensor {
        self.scale(C64::new(c, 0.0))
    }

    /// `self - other`, exact.
    pub fn sub(&self, other: &TtTensor) -> Result<TtTensor> {
        self.add(&other.scale_real(-1.0))
    }

    /// Hermitian adjoint: swap `(i, j)` in every fused index and conjugate.
    pub fn adjoint(&self) -> TtTensor {
        let d = self.d;
        let cores = self
            .cores
            .iter()
            .map(|c| {
                Core::from_fn(c.left, c.phys, c.right, |a, s, b| {
                    let (i, j) = unfuse(s, d);
                    c.get(a, fuse(j, i, d), b).conj()
                })
            })
            .collect();
        TtTensor { d, cores }
    }

    /// `||A - A^H|| <= tol * ||A||`.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        let diff = self.sub(&self.adjoint()).expect("same shape");
        diff.norm() <= tol * self.norm()
    }

    /// Apply a per-site linear map on the physical index (same map at every site).
    pub(crate) fn map_sites(&self, maps: &[DMatrix<C64>]) -> TtTensor {
        let cores = self.cores.iter().zip(maps).map(|(c, m)| c.map_physical(m)).collect();
        TtTensor { d: self.d, cores }
    }

    pub(crate) fn cores_mut(&mut self) -> &mut [Core] {
        &mut self.cores
    }

    /// Right-to-left orthogonalization: cores 2..n become right-orthonormal.
    pub(crate) fn right_orthogonalized(&self) -> TtTensor {
        let mut cores = self.cores.clone();
        for l in (1..cores.len()).rev() {
            let m = cores[l].right_unfolding();
            // M = R^H Q^H with M^H = Q R
            let (q, r) = crate::linalg::thin_qr(m.adjoint());
            let phys = cores[l].phys;
            let right = cores[l].right;
            cores[l] = Core::from_right_unfolding(&q.adjoint(), phys, right);
            cores[l - 1] = cores[l - 1].right_mul(&r.adjoint());
        }
        TtTensor { d: self.d, cores }
    }

    /// Singular values of every unfolding `X^<l>`, `l = 1..n-1`, computed in TT form.
    pub fn unfolding_singular_values(&self) -> Result<Vec<Vec<f64>>> {
        let mut t = self.right_orthogonalized();
        let mut out = Vec::with_capacity(self.n().saturating_sub(1));
        for l in 0..self.n().saturating_sub(1) {
            let core = &t.cores[l];
            let (left, phys) = (core.left, core.phys);
            let svd = crate::linalg::svd_sorted(core.left_unfolding())?;
            out.push(svd.s.clone());
            let k = svd.s.len();
            t.cores[l] = Core::from_left_unfolding(&svd.u, left, phys);
            let sv = DMatrix::from_fn(k, svd.vt.ncols(), |i, j| svd.vt[(i, j)] * svd.s[i]);
            t.cores[l + 1] = t.cores[l + 1].left_mul(&sv);
        }
        Ok(out)
    }

    /// Smallest TT singular value `min_l sigma_{r_l}(X^<l>)` for the given bond ranks;
    /// an unavailable singular value counts as zero.
    pub fn smallest_tt_singular_value(&self, ranks: &[usize]) -> Result<f64> {
        validate_ranks(self.n(), self.d, ranks)?;
        let svals = self.unfolding_singular_values()?;
        Ok(svals
            .iter()
            .zip(ranks)
            .map(|(s, &r)| s.get(r - 1).copied().unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min))
    }
}

/// JSON container: `{n, d, ranks, cores}` with each core a nested array
/// `[left][s][right]` of `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
pub struct TtJson {
    pub n: usize,
    pub d: usize,
    pub ranks: Vec<usize>,
    pub cores: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

impl From<&TtTensor> for TtJson {
    fn from(t: &TtTensor) -> Self {
        let cores = t
            .cores
            .iter()
            .map(|c| {
                (0..c.left)
                    .map(|a| {
                        (0..c.phys)
                            .map(|s| (0..c.right).map(|b| {
                                let z = c.get(a, s, b);
                                [z.re, z.im]
                            }).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        TtJson { n: t.n(), d: t.d, ranks: t.ranks(), cores }
    }
}

impl TryFrom<TtJson> for TtTensor {
    type Error = TomoError;

    fn try_from(j: TtJson) -> Result<Self> {
        if j.cores.len() != j.n {
            return Err(TomoError::ShapeMismatch(format!("n = {} but {} cores", j.n, j.cores.len())));
        }
        let cores = j
            .cores
            .iter()
            .map(|c| {
                let left = c.len();
                let phys = c.first().map(|x| x.len()).unwrap_or(0);
                let right = c.first().and_then(|x| x.first()).map(|x| x.len()).unwrap_or(0);
                let mut data = Vec::with_capacity(left * phys * right);
                for row in c {
                    if row.len() != phys {
                        return Err(TomoError::ShapeMismatch("ragged core".into()));
                    }
                    for col in row {
                        if col.len() != right {
                            return Err(TomoError::ShapeMismatch("ragged core".into()));
                        }
                        data.extend(col.iter().map(|p| C64::new(p[0], p[1])));
                    }
                }
                Core::from_vec(left, phys, right, data)
            })
            .collect::<Result<Vec<_>>>()?;
        let t = TtTensor::new(j.d, cores)?;
        if t.ranks() != j.ranks {
            return Err(TomoError::ShapeMismatch(format!(
                "declared ranks {:?} do not match cores {:?}",
                j.ranks,
                t.ranks()
            )));
        }
        Ok(t)
    }
}

impl Serialize for TtTensor {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        TtJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TtTensor {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let j = TtJson::deserialize(deserializer)?;
        TtTensor::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests;
