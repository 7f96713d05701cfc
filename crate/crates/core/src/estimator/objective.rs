use std::sync::OnceLock;

use nalgebra::DMatrix;

use super::project::project_mpo;
use crate::error::{Result, TomoError};
use crate::povm::{
    local_channel_matrix, measure_map_dense, sum_channel, weighted_element_sum, OutcomeContractor, ProductPovm,
};
use crate::sampler::OutcomeRecord;
use crate::tt::{DenseOperator, Truncation, TtTensor};
use crate::C64;

/// Observed frequencies of one record together with the compressed empirical
/// operator `P_hat = sum_k p_hat_k A_k`, built once and reused by every
/// loss and gradient evaluation.
#[derive(Debug)]
pub struct EmpiricalData {
    povm: ProductPovm,
    terms: Vec<(Vec<usize>, f64)>,
    sum_sq: f64,
    round_tol: f64,
    p_hat_op: OnceLock<TtTensor>,
    dense: OnceLock<DenseCache>,
}

#[derive(Debug)]
struct DenseCache {
    p_hat_op: DenseOperator,
    p_hat_full: Vec<f64>,
    channel_maps: Vec<DMatrix<C64>>,
}

impl EmpiricalData {
    pub fn new(record: &OutcomeRecord, povm: &ProductPovm) -> Result<Self> {
        Self::with_tolerance(record, povm, 1e-14)
    }

    /// `tol` is the relative rounding tolerance for the empirical operator.
    pub fn with_tolerance(record: &OutcomeRecord, povm: &ProductPovm, tol: f64) -> Result<Self> {
        record.validate_against(povm)?;
        let terms: Vec<(Vec<usize>, f64)> = record.empirical().map(|(k, p)| (k.to_vec(), p)).collect();
        Self::from_terms(povm, terms, tol)
    }

    /// Arbitrary non-negative weights on outcomes (e.g. exact probabilities).
    pub fn from_terms(povm: &ProductPovm, terms: Vec<(Vec<usize>, f64)>, tol: f64) -> Result<Self> {
        if terms.is_empty() {
            return Err(TomoError::InvalidInput("no observed outcomes".into()));
        }
        for (o, p) in &terms {
            povm.validate_outcome(o)?;
            if !(p.is_finite() && *p >= 0.0) {
                return Err(TomoError::InvalidInput(format!("weight {} must be finite and non-negative", p)));
            }
        }
        let sum_sq = terms.iter().map(|(_, p)| p * p).sum();
        Ok(EmpiricalData {
            povm: povm.clone(),
            terms,
            sum_sq,
            round_tol: tol,
            p_hat_op: OnceLock::new(),
            dense: OnceLock::new(),
        })
    }

    /// Exact population probabilities of `state` over every outcome (`n <= n_dense`).
    pub fn population(povm: &ProductPovm, state: &TtTensor) -> Result<Self> {
        let p = measure_map_dense(povm, &state.to_dense()?)?;
        let terms = povm.outcomes()?.into_iter().zip(p).filter(|(_, p)| *p != 0.0).collect();
        Self::from_terms(povm, terms, 1e-14)
    }

    pub fn povm(&self) -> &ProductPovm {
        &self.povm
    }

    pub fn n(&self) -> usize {
        self.povm.n()
    }

    /// Observed `(outcome, p_hat)` pairs in lexicographic order.
    pub fn terms(&self) -> &[(Vec<usize>, f64)] {
        &self.terms
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    /// `P_hat = sum_k p_hat_k A_k` as a compressed MPO, built on first use.
    pub fn empirical_operator(&self) -> Result<&TtTensor> {
        if let Some(p) = self.p_hat_op.get() {
            return Ok(p);
        }
        let exact = weighted_element_sum(&self.povm, &self.terms)?;
        let rounded = exact.round(&Truncation::Tolerance(self.round_tol))?;
        let _ = self.p_hat_op.set(rounded);
        Ok(self.p_hat_op.get().expect("just set"))
    }

    /// Observed outcomes only, in the order of [`Self::terms`].
    pub fn observed_outcomes(&self) -> Vec<Vec<usize>> {
        self.terms.iter().map(|(o, _)| o.clone()).collect()
    }

    fn dense_cache(&self) -> Result<&DenseCache> {
        if let Some(c) = self.dense.get() {
            return Ok(c);
        }
        let p_hat_op = self.empirical_operator()?.to_dense()?;
        let k = self.povm.enumerable_count()?;
        let sizes = self.povm.local_sizes();
        let mut p_hat_full = vec![0.0; k];
        for (o, p) in &self.terms {
            p_hat_full[crate::povm::flatten(o, &sizes)] = *p;
        }
        let channel_maps = self.povm.sites().iter().map(local_channel_matrix).collect();
        let _ = self.dense.set(DenseCache { p_hat_op, p_hat_full, channel_maps });
        Ok(self.dense.get().expect("just set"))
    }

    /// `g(rho)` from the observed outcomes only.
    pub fn loss(&self, state: &TtTensor) -> Result<f64> {
        let phi = sum_channel(&self.povm, state)?;
        let quad = state.inner(&phi)?.re;
        let c = OutcomeContractor::new(&self.povm, state)?;
        let mut lin = 0.0;
        for (o, p) in &self.terms {
            lin += p * c.probability(o)?;
        }
        Ok(clamp_loss(quad - 2.0 * lin + self.sum_sq))
    }

    /// `g(rho)` by enumerating all `K` outcomes of a dense state.
    pub fn loss_dense(&self, state: &DenseOperator) -> Result<f64> {
        let cache = self.dense_cache()?;
        let p = measure_map_dense(&self.povm, state)?;
        Ok(p.iter().zip(&cache.p_hat_full).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    /// `Phi(rho) - P_hat` as a dense matrix.
    pub(crate) fn gradient_dense(&self, state: &DenseOperator) -> Result<DenseOperator> {
        let cache = self.dense_cache()?;
        let phi = state.map_sites(&cache.channel_maps)?;
        DenseOperator::new(state.n(), state.d(), phi.matrix() - cache.p_hat_op.matrix())
    }

    /// `<A_k, rho>` for each listed outcome, by per-outcome contraction.
    pub(crate) fn outcome_probabilities(&self, state: &TtTensor, outcomes: &[Vec<usize>]) -> Result<Vec<f64>> {
        let c = OutcomeContractor::new(&self.povm, state)?;
        outcomes.iter().map(|o| c.probability(o)).collect()
    }
}

/// Tiny negative values come from cancellation in the expanded form.
fn clamp_loss(v: f64) -> f64 {
    if v < 0.0 && v >= -1e-12 {
        0.0
    } else {
        v
    }
}

/// `g(rho) = ||A(rho) - p_hat||^2`.
pub fn loss(state: &TtTensor, record: &OutcomeRecord, povm: &ProductPovm) -> Result<f64> {
    EmpiricalData::new(record, povm)?.loss(state)
}

/// `grad g(rho) = Phi(rho) - P_hat`, kept as two MPO terms.
#[derive(Clone, Debug)]
pub struct Gradient {
    pub channel: TtTensor,
    pub empirical: TtTensor,
}

impl Gradient {
    /// The exact sum as one MPO (ranks add).
    pub fn to_tt(&self) -> Result<TtTensor> {
        self.channel.sub(&self.empirical)
    }

    pub fn to_dense(&self) -> Result<DenseOperator> {
        self.to_tt()?.to_dense()
    }

    /// `P(state - mu * grad)` without forming a dense operator.
    pub fn step_and_project(&self, state: &TtTensor, mu: f64, ranks: &[usize]) -> Result<TtTensor> {
        let raw = TtTensor::sum(&[state.clone(), self.channel.scale_real(-mu), self.empirical.scale_real(mu)])?;
        project_mpo(&raw, ranks)
    }
}

impl EmpiricalData {
    pub fn gradient(&self, state: &TtTensor) -> Result<Gradient> {
        Ok(Gradient { channel: sum_channel(&self.povm, state)?, empirical: self.empirical_operator()?.clone() })
    }
}

pub fn wirtinger_gradient(state: &TtTensor, record: &OutcomeRecord, povm: &ProductPovm) -> Result<Gradient> {
    EmpiricalData::new(record, povm)?.gradient(state)
}
