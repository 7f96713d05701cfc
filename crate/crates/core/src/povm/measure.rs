use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DensePovm, ProductPovm};
use crate::error::{Result, TomoError};
use crate::linalg::frobenius_inner;
use crate::tt::{fuse, DenseOperator, TtTensor, DEFAULT_MAX_DENSE_SITES};
use crate::C64;

/// Probabilities in `[-CLAMP_TOLERANCE, 0)` are treated as rounding noise and set to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-10;

/// Largest imaginary residue tolerated when taking `Re <A_k, rho>`.
const IMAG_TOLERANCE: f64 = 1e-10;

/// Probabilities after clamping, with the number of entries that were clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector {
    pub values: Vec<f64>,
    pub clamped: usize,
}

impl ProbabilityVector {
    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn clamp_probabilities(raw: Vec<f64>) -> Result<ProbabilityVector> {
    let mut clamped = 0;
    let mut values = raw;
    for v in values.iter_mut() {
        if !v.is_finite() {
            return Err(TomoError::Numerical(format!("non-finite probability {}", v)));
        }
        if *v < -CLAMP_TOLERANCE {
            return Err(TomoError::NegativeProbability { value: *v });
        }
        if *v < 0.0 {
            *v = 0.0;
            clamped += 1;
        }
    }
    Ok(ProbabilityVector { values, clamped })
}

/// POVMs whose full outcome distribution can be enumerated on a dense state.
pub trait DenseMeasurement {
    /// `<A_k, state>` for every `k`, in outcome order (complex, unprocessed).
    fn raw_inner_products(&self, state: &DenseOperator) -> Result<Vec<C64>>;
}

impl DenseMeasurement for DensePovm {
    fn raw_inner_products(&self, state: &DenseOperator) -> Result<Vec<C64>> {
        if state.dim() != self.dim() {
            return Err(TomoError::ShapeMismatch(format!(
                "state dimension {} vs POVM dimension {}",
                state.dim(),
                self.dim()
            )));
        }
        Ok(self.elements().iter().map(|a| frobenius_inner(a, state.matrix())).collect())
    }
}

impl DenseMeasurement for ProductPovm {
    /// Mode-by-mode contraction of the fused state tensor with the local weights.
    fn raw_inner_products(&self, state: &DenseOperator) -> Result<Vec<C64>> {
        if state.n() != self.n() || state.d() != self.d() {
            return Err(TomoError::ShapeMismatch(format!(
                "state has n={}, d={}; POVM has n={}, d={}",
                state.n(),
                state.d(),
                self.n(),
                self.d()
            )));
        }
        self.enumerable_count()?;
        let d2 = self.d() * self.d();
        let mut shape: Vec<usize> = vec![d2; self.n()];
        let mut x = state.fused_entries();
        for (l, site) in self.sites().iter().enumerate() {
            let w = site.contraction_weights();
            let outer: usize = shape[..l].iter().product();
            let inner: usize = shape[l + 1..].iter().product();
            let mut y = vec![C64::new(0.0, 0.0); outer * w.len() * inner];
            for o in 0..outer {
                for (i, wi) in w.iter().enumerate() {
                    let dst = &mut y[(o * w.len() + i) * inner..(o * w.len() + i + 1) * inner];
                    for (s, &ws) in wi.iter().enumerate() {
                        if ws == C64::new(0.0, 0.0) {
                            continue;
                        }
                        let src = &x[(o * d2 + s) * inner..(o * d2 + s + 1) * inner];
                        for (t, v) in dst.iter_mut().zip(src) {
                            *t += ws * v;
                        }
                    }
                }
            }
            shape[l] = w.len();
            x = y;
        }
        Ok(x)
    }
}

/// `p_k = Re <A_k, state>` for all outcomes. Values are not clamped; see
/// [`clamp_probabilities`]. Fails if any imaginary residue exceeds `1e-10`.
pub fn measure_map_dense<P: DenseMeasurement + ?Sized>(povm: &P, state: &DenseOperator) -> Result<Vec<f64>> {
    let raw = povm.raw_inner_products(state)?;
    let residue = raw.iter().fold(0.0_f64, |acc, z| acc.max(z.im.abs()));
    if residue > IMAG_TOLERANCE {
        return Err(TomoError::NotHermitian(residue));
    }
    Ok(raw.into_iter().map(|z| z.re).collect())
}

/// Per-site contractions of an MPO against a product POVM.
///
/// For site `l` and local outcome `i`, `site_matrix(l, i) = sum_s w_i[s] X_l[s]`
/// with `w_i` the conjugated fused element. Right environments contract the
/// remaining sites against the identity, which uses `sum_i B_i = I`.
#[derive(Clone, Debug)]
pub struct OutcomeContractor {
    sizes: Vec<usize>,
    site_mats: Vec<Vec<DMatrix<C64>>>,
    /// `right_envs[l]` has length `left rank of site l`; `right_envs[n] = [1]`.
    right_envs: Vec<DVector<C64>>,
    /// `site_mats[l][i] * right_envs[l + 1]`.
    closed: Vec<Vec<DVector<C64>>>,
}

impl OutcomeContractor {
    pub fn new(povm: &ProductPovm, state: &TtTensor) -> Result<Self> {
        if povm.n() != state.n() || povm.d() != state.d() {
            return Err(TomoError::ShapeMismatch(format!(
                "state has n={}, d={}; POVM has n={}, d={}",
                state.n(),
                state.d(),
                povm.n(),
                povm.d()
            )));
        }
        let d = state.d();
        let n = state.n();
        let site_mats: Vec<Vec<DMatrix<C64>>> = povm
            .sites()
            .iter()
            .zip(state.cores())
            .map(|(site, core)| site.contraction_weights().iter().map(|w| core.contract_physical(w)).collect())
            .collect();
        let identity: Vec<C64> = (0..d * d)
            .map(|s| if s % (d + 1) == 0 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) })
            .collect();
        debug_assert!(identity[fuse(d - 1, d - 1, d)] == C64::new(1.0, 0.0));
        let mut right_envs = vec![DVector::from_element(1, C64::new(1.0, 0.0)); n + 1];
        for l in (0..n).rev() {
            right_envs[l] = state.core(l).contract_physical(&identity) * &right_envs[l + 1];
        }
        let closed = site_mats
            .iter()
            .enumerate()
            .map(|(l, mats)| mats.iter().map(|m| m * &right_envs[l + 1]).collect())
            .collect();
        Ok(OutcomeContractor { sizes: povm.local_sizes(), site_mats, right_envs, closed })
    }

    pub fn n(&self) -> usize {
        self.sizes.len()
    }

    pub fn local_sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn check_prefix(&self, prefix: &[usize]) -> Result<()> {
        if prefix.len() > self.n() {
            return Err(TomoError::IndexOutOfRange(format!("prefix of length {} for {} sites", prefix.len(), self.n())));
        }
        for (l, &i) in prefix.iter().enumerate() {
            if i >= self.sizes[l] {
                return Err(TomoError::IndexOutOfRange(format!(
                    "index {} at site {} (local size {})",
                    i, l, self.sizes[l]
                )));
            }
        }
        Ok(())
    }

    /// Row vector `M_{1,i_1} ... M_{l,i_l}` for a validated prefix.
    pub fn left_vector(&self, prefix: &[usize]) -> Result<DVector<C64>> {
        self.check_prefix(prefix)?;
        let mut v = DVector::from_element(1, C64::new(1.0, 0.0));
        for (l, &i) in prefix.iter().enumerate() {
            v = self.advance(&v, l, i);
        }
        Ok(v)
    }

    /// Extend a left vector by outcome `i` at site `l`.
    pub fn advance(&self, v: &DVector<C64>, l: usize, i: usize) -> DVector<C64> {
        self.site_mats[l][i].tr_mul(v)
    }

    /// Marginal of the prefix ending at site `l - 1` extended by each outcome at site `l`.
    pub fn extension_weights(&self, v: &DVector<C64>, l: usize) -> Vec<f64> {
        self.closed[l].iter().map(|u| v.dot(u).re).collect()
    }

    /// `Re <B_{i_1} (x) ... (x) B_{i_l} (x) I (x) ... (x) I, rho>`.
    pub fn marginal(&self, prefix: &[usize]) -> Result<f64> {
        let v = self.left_vector(prefix)?;
        Ok(v.dot(&self.right_envs[prefix.len()]).re)
    }

    pub fn probability(&self, outcome: &[usize]) -> Result<f64> {
        if outcome.len() != self.n() {
            return Err(TomoError::IndexOutOfRange(format!(
                "outcome of length {} for {} sites",
                outcome.len(),
                self.n()
            )));
        }
        self.marginal(outcome)
    }
}

/// `Re <A_k, rho>` for a single outcome, in `O(n d^2 r^2)`.
pub fn prob_of_outcome(povm: &ProductPovm, state: &TtTensor, outcome: &[usize]) -> Result<f64> {
    povm.validate_outcome(outcome)?;
    if outcome.len() != povm.n() {
        return Err(TomoError::IndexOutOfRange(format!("outcome of length {} for {} sites", outcome.len(), povm.n())));
    }
    OutcomeContractor::new(povm, state)?.probability(outcome)
}

/// Probability that the first `prefix.len()` sites produce `prefix`.
pub fn marginal_prefix_prob(povm: &ProductPovm, state: &TtTensor, prefix: &[usize]) -> Result<f64> {
    povm.validate_outcome(prefix)?;
    OutcomeContractor::new(povm, state)?.marginal(prefix)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMethod {
    Exhaustive,
    Beam { width: usize },
}

impl GammaMethod {
    pub const DEFAULT_BEAM_WIDTH: usize = 64;
}

/// `gamma = K * max_k p_k` and the maximizing outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub gamma: f64,
    pub argmax_outcome: Vec<usize>,
    /// False for beam search, whose value is only a lower bound.
    pub exact: bool,
}

/// Larger probability first; ties broken by the lexicographically smaller outcome.
fn better(a: &(f64, Vec<usize>), b: &(f64, Vec<usize>)) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(&b.1))
}

fn exhaustive_from(c: &OutcomeContractor, prefix: &mut Vec<usize>, v: &DVector<C64>, best: &mut (f64, Vec<usize>)) {
    let l = prefix.len();
    if l + 1 == c.n() {
        for (i, p) in c.extension_weights(v, l).into_iter().enumerate() {
            if p > best.0 {
                prefix.push(i);
                *best = (p, prefix.clone());
                prefix.pop();
            }
        }
        return;
    }
    for i in 0..c.sizes[l] {
        let next = c.advance(v, l, i);
        prefix.push(i);
        exhaustive_from(c, prefix, &next, best);
        prefix.pop();
    }
}

pub fn gamma(povm: &ProductPovm, state: &TtTensor, method: GammaMethod) -> Result<GammaReport> {
    let c = OutcomeContractor::new(povm, state)?;
    let k = povm.num_outcomes_f64();
    let root = DVector::from_element(1, C64::new(1.0, 0.0));
    match method {
        GammaMethod::Exhaustive => {
            if povm.n() > DEFAULT_MAX_DENSE_SITES {
                return Err(TomoError::TooLarge { sites: povm.n(), limit: DEFAULT_MAX_DENSE_SITES });
            }
            let (p, outcome) = if c.n() == 1 {
                let mut best = (f64::NEG_INFINITY, vec![]);
                exhaustive_from(&c, &mut vec![], &root, &mut best);
                best
            } else {
                // one branch per first-site outcome, merged in outcome order
                let branches: Vec<(f64, Vec<usize>)> = (0..c.sizes[0])
                    .into_par_iter()
                    .map(|i| {
                        let mut best = (f64::NEG_INFINITY, vec![]);
                        let v = c.advance(&root, 0, i);
                        exhaustive_from(&c, &mut vec![i], &v, &mut best);
                        best
                    })
                    .collect();
                branches.into_iter().min_by(better).expect("at least one outcome")
            };
            Ok(GammaReport { gamma: k * p, argmax_outcome: outcome, exact: true })
        }
        GammaMethod::Beam { width } => {
            if width == 0 {
                return Err(TomoError::InvalidInput("beam width must be >= 1".into()));
            }
            let mut beam: Vec<(f64, Vec<usize>, DVector<C64>)> = vec![(1.0, vec![], root)];
            for l in 0..c.n() {
                let mut cand: Vec<(f64, Vec<usize>, usize)> = beam
                    .par_iter()
                    .enumerate()
                    .flat_map_iter(|(b, (_, prefix, v))| {
                        c.extension_weights(v, l).into_iter().enumerate().map(move |(i, p)| {
                            let mut ext = prefix.clone();
                            ext.push(i);
                            (p, ext, b)
                        })
                    })
                    .collect();
                cand.sort_by(|x, y| better(&(x.0, x.1.clone()), &(y.0, y.1.clone())));
                cand.truncate(width);
                beam = cand
                    .into_iter()
                    .map(|(p, ext, b)| {
                        let v = c.advance(&beam[b].2, l, *ext.last().expect("non-empty"));
                        (p, ext, v)
                    })
                    .collect();
            }
            let (p, outcome, _) = beam.swap_remove(0);
            Ok(GammaReport { gamma: k * p, argmax_outcome: outcome, exact: false })
        }
    }
}

/// The factor entering the sample-complexity bound for a `t`-design POVM:
/// `gamma` for `t = 2`, `1` for `t > 2`.
pub fn gamma_t(t: usize, gamma: f64) -> f64 {
    if t > 2 {
        1.0
    } else {
        gamma
    }
}

/// `sum_k <A_k, rho> A_k`, applied site-wise as `Phi_l(X) = sum_i <B_i, X> B_i`.
/// Ranks are unchanged.
pub fn sum_channel(povm: &ProductPovm, state: &TtTensor) -> Result<TtTensor> {
    if povm.n() != state.n() || povm.d() != state.d() {
        return Err(TomoError::ShapeMismatch("POVM and state disagree on n or d".into()));
    }
    let maps: Vec<DMatrix<C64>> = povm.sites().iter().map(local_channel_matrix).collect();
    Ok(state.map_sites(&maps))
}

/// `S[s', s] = sum_i B_i[s'] conj(B_i[s])` on fused indices.
pub(crate) fn local_channel_matrix(site: &super::LocalPovm) -> DMatrix<C64> {
    let d2 = site.d() * site.d();
    let mut s = DMatrix::zeros(d2, d2);
    for b in site.elements() {
        let f = DVector::from_vec(crate::tt::fuse_matrix(b));
        s += &f * f.adjoint();
    }
    s
}

/// Exact MPO of `sum_t w_t A_{k_t}` for product-POVM outcomes `k_t`.
///
/// Cuts left of the middle are indexed by distinct outcome prefixes and cuts
/// right of it by distinct suffixes, so bond ranks never exceed the number of
/// terms nor `K_loc^min(l, n-l)`. Duplicate outcomes are merged. No rounding
/// is performed.
pub fn weighted_element_sum(povm: &ProductPovm, terms: &[(Vec<usize>, f64)]) -> Result<TtTensor> {
    let n = povm.n();
    let d = povm.d();
    if terms.is_empty() {
        return Ok(TtTensor::zero(n, d));
    }
    for (o, _) in terms {
        if o.len() != n {
            return Err(TomoError::IndexOutOfRange(format!("outcome of length {} for {} sites", o.len(), n)));
        }
        povm.validate_outcome(o)?;
    }
    let mid = n / 2;
    // ids[c] maps the key of cut c (1-based, c = 1..n-1) to a bond index
    let mut ids: Vec<std::collections::HashMap<&[usize], usize>> = vec![Default::default(); n + 1];
    for (o, _) in terms {
        for c in 1..n {
            let key = if c <= mid { &o[..c] } else { &o[c..] };
            let next = ids[c].len();
            ids[c].entry(key).or_insert(next);
        }
    }
    let bond = |c: usize, o: &[usize]| -> usize {
        if c == 0 || c == n {
            0
        } else {
            ids[c][if c <= mid { &o[..c] } else { &o[c..] }]
        }
    };
    let dims: Vec<usize> = (0..=n).map(|c| if c == 0 || c == n { 1 } else { ids[c].len() }).collect();
    let mut cores = Vec::with_capacity(n);
    for l in 0..n {
        let k_loc = povm.site(l).len();
        let mut coeff = crate::tt::Core::zeros(dims[l], k_loc, dims[l + 1]);
        for (o, w) in terms {
            let (a, b) = (bond(l, o), bond(l + 1, o));
            if l == mid {
                coeff.set(a, o[l], b, coeff.get(a, o[l], b) + C64::new(*w, 0.0));
            } else {
                coeff.set(a, o[l], b, C64::new(1.0, 0.0));
            }
        }
        let site = povm.site(l);
        let map = DMatrix::from_fn(d * d, k_loc, |s, i| {
            let (r, c) = crate::tt::unfuse(s, d);
            site.element(i)[(r, c)]
        });
        cores.push(coeff.map_physical(&map));
    }
    TtTensor::new(d, cores)
}
