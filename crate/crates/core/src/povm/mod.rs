//! Informationally complete POVMs and the measurement map.
//!
//! A [`LocalPovm`] acts on one site; a [`ProductPovm`] holds one local POVM per
//! site and never materializes the global elements `A_k = B_{i_1} (x) ... (x) B_{i_n}`.
//! A [`DensePovm`] stores explicit `dim x dim` elements, optionally together with
//! the unit vectors `w_k` of a rank-one design POVM `A_k = (dim / K) w_k w_k^H`.
//!
//! Outcome indices are zero-based in memory. The JSON outcome record format is
//! one-based per site.

mod design;
mod measure;

pub(crate) use measure::local_channel_matrix;
mod sic;

pub use design::{binomial, check_t_design, sym_projector, DesignReport, MAX_MOMENT_DIM};
pub use measure::{
    clamp_probabilities, gamma, gamma_t, marginal_prefix_prob, measure_map_dense, prob_of_outcome, DenseMeasurement,
    sum_channel, weighted_element_sum, GammaMethod, GammaReport, OutcomeContractor, ProbabilityVector, CLAMP_TOLERANCE,
};
pub use sic::{bundled_fiducial, check_sic, dual_basis_sic, sic_qubit, wh_sic_from_fiducial, SicReport};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::linalg::{hermitian_eigenvalues, hermitian_eigh, kron, max_abs_entry};
use crate::tt::{fuse_matrix, DEFAULT_MAX_DENSE_SITES};
use crate::C64;

/// PSD and completeness check at `1e-10`.
pub fn check_povm(elements: &[DMatrix<C64>]) -> bool {
    povm_defects(elements).map(|(neg, comp)| neg <= 1e-10 && comp <= 1e-10).unwrap_or(false)
}

/// Returns (most negative eigenvalue magnitude, completeness deviation).
fn povm_defects(elements: &[DMatrix<C64>]) -> Option<(f64, f64)> {
    let dim = elements.first()?.nrows();
    let mut sum = DMatrix::<C64>::zeros(dim, dim);
    let mut neg: f64 = 0.0;
    for e in elements {
        if e.nrows() != dim || e.ncols() != dim {
            return None;
        }
        if max_abs_entry(&(e - e.adjoint())) > 1e-10 {
            return None;
        }
        let min = hermitian_eigenvalues(e).first().copied().unwrap_or(0.0);
        neg = neg.max(-min);
        sum += e;
    }
    Some((neg, max_abs_entry(&(sum - DMatrix::identity(dim, dim)))))
}

/// A POVM on a single site of dimension `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPovm {
    d: usize,
    elements: Vec<DMatrix<C64>>,
}

impl LocalPovm {
    /// Validates PSD (min eigenvalue `>= -1e-12`) and completeness (`1e-12` max-entry).
    pub fn new(elements: Vec<DMatrix<C64>>) -> Result<Self> {
        let d = elements
            .first()
            .map(|e| e.nrows())
            .ok_or_else(|| TomoError::InvalidPovm("no elements".into()))?;
        let (neg, comp) = povm_defects(&elements)
            .ok_or_else(|| TomoError::InvalidPovm("elements must be Hermitian d x d matrices".into()))?;
        if neg > 1e-12 {
            return Err(TomoError::InvalidPovm(format!("element with eigenvalue {:.3e}", -neg)));
        }
        if comp > 1e-12 {
            return Err(TomoError::InvalidPovm(format!("elements sum to identity only within {:.3e}", comp)));
        }
        if d < 2 {
            return Err(TomoError::InvalidPovm("local dimension must be >= 2".into()));
        }
        Ok(LocalPovm { d, elements })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[DMatrix<C64>] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &DMatrix<C64> {
        &self.elements[i]
    }

    /// Conjugated fused vectors: `w_i[s] = conj(B_i[s])`, so that
    /// `<B_i, X> = sum_s w_i[s] X[s]`.
    pub(crate) fn contraction_weights(&self) -> Vec<Vec<C64>> {
        self.elements
            .iter()
            .map(|b| fuse_matrix(b).into_iter().map(|z| z.conj()).collect())
            .collect()
    }

    /// Unit vectors `w_k` with `B_k = (d / K) w_k w_k^H`, if every element has rank one.
    pub fn rank_one_vectors(&self) -> Option<Vec<DVector<C64>>> {
        let scale = self.elements.len() as f64 / self.d as f64;
        self.elements
            .iter()
            .map(|b| {
                let (vals, vecs) = hermitian_eigh(b);
                let top = *vals.last()?;
                if vals[..vals.len() - 1].iter().any(|v| v.abs() > 1e-10) || top <= 0.0 {
                    return None;
                }
                let w = vecs.column(vals.len() - 1) * C64::new((top * scale).sqrt(), 0.0);
                ((w.norm() - 1.0).abs() <= 1e-10).then_some(w)
            })
            .collect()
    }
}

/// One local POVM per site; outcome `k = (i_1, ..., i_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductPovm {
    sites: Vec<LocalPovm>,
}

impl ProductPovm {
    pub fn new(sites: Vec<LocalPovm>) -> Result<Self> {
        let d = sites
            .first()
            .map(|s| s.d)
            .ok_or_else(|| TomoError::InvalidPovm("product POVM needs at least one site".into()))?;
        if sites.iter().any(|s| s.d != d) {
            return Err(TomoError::InvalidPovm("all sites must share the local dimension".into()));
        }
        Ok(ProductPovm { sites })
    }

    pub fn uniform(local: LocalPovm, n: usize) -> Result<Self> {
        Self::new(vec![local; n])
    }

    /// The product of qubit SICs on `n` sites.
    pub fn local_sic(n: usize) -> Self {
        ProductPovm { sites: vec![sic_qubit(); n] }
    }

    pub fn n(&self) -> usize {
        self.sites.len()
    }

    pub fn d(&self) -> usize {
        self.sites[0].d
    }

    pub fn sites(&self) -> &[LocalPovm] {
        &self.sites
    }

    pub fn site(&self, l: usize) -> &LocalPovm {
        &self.sites[l]
    }

    /// Per-site outcome counts.
    pub fn local_sizes(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.len()).collect()
    }

    /// Total outcome count `K`, or `None` on overflow.
    pub fn num_outcomes(&self) -> Option<u128> {
        self.sites.iter().try_fold(1u128, |acc, s| acc.checked_mul(s.len() as u128))
    }

    /// `K` as a float (for scaling factors at any `n`).
    pub fn num_outcomes_f64(&self) -> f64 {
        self.sites.iter().map(|s| s.len() as f64).product()
    }

    pub fn validate_outcome(&self, outcome: &[usize]) -> Result<()> {
        if outcome.len() > self.n() {
            return Err(TomoError::IndexOutOfRange(format!(
                "outcome of length {} for {} sites",
                outcome.len(),
                self.n()
            )));
        }
        for (l, (&i, s)) in outcome.iter().zip(&self.sites).enumerate() {
            if i >= s.len() {
                return Err(TomoError::IndexOutOfRange(format!(
                    "index {} at site {} (local size {})",
                    i,
                    l,
                    s.len()
                )));
            }
        }
        Ok(())
    }

    /// Global element `B_{i_1} (x) ... (x) B_{i_n}` as a dense matrix.
    pub fn element_dense(&self, outcome: &[usize]) -> Result<DMatrix<C64>> {
        if self.n() > DEFAULT_MAX_DENSE_SITES {
            return Err(TomoError::TooLarge { sites: self.n(), limit: DEFAULT_MAX_DENSE_SITES });
        }
        if outcome.len() != self.n() {
            return Err(TomoError::IndexOutOfRange("outcome length must equal n".into()));
        }
        self.validate_outcome(outcome)?;
        let mut acc = DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
        for (s, &i) in self.sites.iter().zip(outcome) {
            acc = kron(&acc, s.element(i));
        }
        Ok(acc)
    }

    /// Global element as a rank-one MPO.
    pub fn element_tt(&self, outcome: &[usize]) -> Result<crate::tt::TtTensor> {
        self.validate_outcome(outcome)?;
        let ops: Vec<DMatrix<C64>> = self.sites.iter().zip(outcome).map(|(s, &i)| s.element(i).clone()).collect();
        crate::tt::TtTensor::product(&ops)
    }

    /// All outcomes in lexicographic order (site 1 most significant).
    pub fn outcomes(&self) -> Result<Vec<Vec<usize>>> {
        let k = self.enumerable_count()?;
        let sizes = self.local_sizes();
        Ok((0..k).map(|flat| unflatten(flat, &sizes)).collect())
    }

    pub(crate) fn enumerable_count(&self) -> Result<usize> {
        if self.n() > DEFAULT_MAX_DENSE_SITES {
            return Err(TomoError::TooLarge { sites: self.n(), limit: DEFAULT_MAX_DENSE_SITES });
        }
        self.num_outcomes()
            .and_then(|k| usize::try_from(k).ok())
            .ok_or_else(|| TomoError::SizeCap("outcome count overflows".into()))
    }

    /// Lift to an explicit POVM on `d^n` (small `n` only).
    pub fn to_dense(&self) -> Result<DensePovm> {
        let outcomes = self.outcomes()?;
        let elements = outcomes.iter().map(|o| self.element_dense(o)).collect::<Result<Vec<_>>>()?;
        let vectors = self
            .sites
            .iter()
            .map(|s| s.rank_one_vectors())
            .collect::<Option<Vec<_>>>()
            .map(|per_site| {
                outcomes
                    .iter()
                    .map(|o| {
                        let mut w = DVector::from_element(1, C64::new(1.0, 0.0));
                        for (vs, &i) in per_site.iter().zip(o) {
                            w = w.kronecker(&vs[i]);
                        }
                        w
                    })
                    .collect()
            });
        Ok(DensePovm { dim: elements[0].nrows(), elements, vectors })
    }
}

pub(crate) fn flatten(outcome: &[usize], sizes: &[usize]) -> usize {
    outcome.iter().zip(sizes).fold(0, |acc, (&i, &k)| acc * k + i)
}

pub(crate) fn unflatten(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    let mut out = vec![0; sizes.len()];
    for (slot, &k) in out.iter_mut().zip(sizes).rev() {
        *slot = flat % k;
        flat /= k;
    }
    out
}

/// A POVM with explicit `dim x dim` elements.
#[derive(Clone, Debug, PartialEq)]
pub struct DensePovm {
    dim: usize,
    elements: Vec<DMatrix<C64>>,
    vectors: Option<Vec<DVector<C64>>>,
}

impl DensePovm {
    /// Explicit elements; PSD and completeness verified to `1e-10`.
    pub fn new(elements: Vec<DMatrix<C64>>) -> Result<Self> {
        if !check_povm(&elements) {
            return Err(TomoError::InvalidPovm("elements are not PSD or do not sum to the identity".into()));
        }
        Ok(DensePovm { dim: elements[0].nrows(), elements, vectors: None })
    }

    /// Elements without validation, for inspecting candidate sets.
    pub fn from_elements_unchecked(elements: Vec<DMatrix<C64>>) -> Self {
        let dim = elements.first().map(|e| e.nrows()).unwrap_or(0);
        DensePovm { dim, elements, vectors: None }
    }

    /// Rank-one design POVM `A_k = (dim / K) w_k w_k^H`. Vectors must be unit to `1e-12`.
    pub fn from_vectors(vectors: Vec<DVector<C64>>) -> Result<Self> {
        let dim = vectors.first().map(|v| v.len()).ok_or_else(|| TomoError::InvalidPovm("no vectors".into()))?;
        for v in &vectors {
            if v.len() != dim {
                return Err(TomoError::InvalidPovm("vectors differ in length".into()));
            }
            if (v.norm() - 1.0).abs() > 1e-12 {
                return Err(TomoError::InvalidPovm(format!("vector norm {} is not 1", v.norm())));
            }
        }
        let scale = C64::new(dim as f64 / vectors.len() as f64, 0.0);
        let elements = vectors.iter().map(|w| w * w.adjoint() * scale).collect();
        Ok(DensePovm { dim, elements, vectors: Some(vectors) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[DMatrix<C64>] {
        &self.elements
    }

    pub fn vectors(&self) -> Option<&[DVector<C64>]> {
        self.vectors.as_deref()
    }

    pub fn is_valid(&self) -> bool {
        check_povm(&self.elements)
    }
}

impl From<LocalPovm> for DensePovm {
    fn from(p: LocalPovm) -> Self {
        let vectors = p.rank_one_vectors();
        DensePovm { dim: p.d, elements: p.elements, vectors }
    }
}

/// Row-major matrix of `[re, im]` pairs.
pub type JsonMatrix = Vec<Vec<[f64; 2]>>;

fn matrix_to_json(m: &DMatrix<C64>) -> JsonMatrix {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
}

fn matrix_from_json(m: &JsonMatrix) -> Result<DMatrix<C64>> {
    let rows = m.len();
    let cols = m.first().map(|r| r.len()).unwrap_or(0);
    if rows == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(TomoError::ShapeMismatch("ragged or empty matrix".into()));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| C64::new(m[i][j][0], m[i][j][1])))
}

/// `{d, elements}` with matrices as row-major nested `[re, im]` arrays.
#[derive(Serialize, Deserialize)]
pub struct LocalPovmJson {
    pub d: usize,
    pub elements: Vec<JsonMatrix>,
}

impl From<&LocalPovm> for LocalPovmJson {
    fn from(p: &LocalPovm) -> Self {
        LocalPovmJson { d: p.d, elements: p.elements.iter().map(matrix_to_json).collect() }
    }
}

impl TryFrom<&LocalPovmJson> for LocalPovm {
    type Error = TomoError;

    fn try_from(j: &LocalPovmJson) -> Result<Self> {
        let elements = j.elements.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
        if elements.iter().any(|e| e.nrows() != j.d || e.ncols() != j.d) {
            return Err(TomoError::ShapeMismatch(format!("elements must be {}x{}", j.d, j.d)));
        }
        LocalPovm::new(elements)
    }
}

/// Product POVM file: either explicit per-site POVMs or one shared POVM repeated.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProductPovmJson {
    Sites { sites: Vec<LocalPovmJson> },
    Shared { local: LocalPovmJson, repeat: usize },
}

impl From<&ProductPovm> for ProductPovmJson {
    fn from(p: &ProductPovm) -> Self {
        if p.sites.windows(2).all(|w| w[0] == w[1]) {
            ProductPovmJson::Shared { local: (&p.sites[0]).into(), repeat: p.n() }
        } else {
            ProductPovmJson::Sites { sites: p.sites.iter().map(Into::into).collect() }
        }
    }
}

impl TryFrom<&ProductPovmJson> for ProductPovm {
    type Error = TomoError;

    fn try_from(j: &ProductPovmJson) -> Result<Self> {
        match j {
            ProductPovmJson::Sites { sites } => {
                ProductPovm::new(sites.iter().map(LocalPovm::try_from).collect::<Result<Vec<_>>>()?)
            }
            ProductPovmJson::Shared { local, repeat } => {
                if *repeat == 0 {
                    return Err(TomoError::InvalidPovm("repeat must be >= 1".into()));
                }
                ProductPovm::uniform(LocalPovm::try_from(local)?, *repeat)
            }
        }
    }
}

/// Explicit POVM file `{d, elements}` where `d` is the full dimension.
#[derive(Serialize, Deserialize)]
pub struct DensePovmJson {
    pub d: usize,
    pub elements: Vec<JsonMatrix>,
}

impl From<&DensePovm> for DensePovmJson {
    fn from(p: &DensePovm) -> Self {
        DensePovmJson { d: p.dim, elements: p.elements.iter().map(matrix_to_json).collect() }
    }
}

impl TryFrom<&DensePovmJson> for DensePovm {
    type Error = TomoError;

    fn try_from(j: &DensePovmJson) -> Result<Self> {
        let elements = j.elements.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
        if elements.is_empty() || elements.iter().any(|e| e.nrows() != j.d || e.ncols() != j.d) {
            return Err(TomoError::ShapeMismatch(format!("elements must be {}x{}", j.d, j.d)));
        }
        Ok(DensePovm::from_elements_unchecked(elements))
    }
}

/// Unit-vector file for design checks: `{vectors: [[[re, im], ...], ...]}`.
#[derive(Serialize, Deserialize)]
pub struct VectorSetJson {
    pub vectors: Vec<Vec<[f64; 2]>>,
}

impl VectorSetJson {
    pub fn to_vectors(&self) -> Vec<DVector<C64>> {
        self.vectors
            .iter()
            .map(|v| DVector::from_iterator(v.len(), v.iter().map(|p| C64::new(p[0], p[1]))))
            .collect()
    }

    pub fn from_vectors(vs: &[DVector<C64>]) -> Self {
        VectorSetJson { vectors: vs.iter().map(|v| v.iter().map(|z| [z.re, z.im]).collect()).collect() }
    }
}
