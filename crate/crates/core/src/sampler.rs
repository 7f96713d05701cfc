//! Simulated measurement shots.
//!
//! Two samplers produce the same [`OutcomeRecord`] type:
//! [`sample_enumerate`] builds the full probability vector and draws from its
//! cumulative distribution, and [`sample_sequential`] draws site by site from
//! conditional marginals of the MPO, which scales to any `n`.
//!
//! Every shot uses its own ChaCha20 stream, selected by `(seed, shot index)`,
//! so results do not depend on the number of threads.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::povm::{
    clamp_probabilities, measure_map_dense, DenseMeasurement, DensePovm, OutcomeContractor, ProductPovm,
    CLAMP_TOLERANCE,
};
use crate::tt::{DenseOperator, TtTensor};
use crate::C64;

/// Largest tolerated deviation of the total probability from one.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Attempts per shot before a zero-mass prefix becomes an error.
pub const MAX_SHOT_ATTEMPTS: usize = 10;

const SHOT_CHUNK: u64 = 1 << 12;

/// Counters collected while sampling.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingDiagnostics {
    /// Probabilities or conditionals in `[-1e-10, 0)` that were set to zero.
    pub clamped: u64,
    /// Shots restarted after reaching a prefix with zero mass.
    pub retries: u64,
}

impl SamplingDiagnostics {
    fn merge(mut self, other: Self) -> Self {
        self.clamped += other.clamped;
        self.retries += other.retries;
        self
    }
}

/// Sparse outcome counts `f_k` from `M` shots. Outcomes are zero-based per site.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRecord {
    pub m: u64,
    pub seed: u64,
    pub povm_id: String,
    counts: BTreeMap<Vec<usize>, u64>,
    pub diagnostics: SamplingDiagnostics,
}

impl OutcomeRecord {
    /// Validates that counts are positive and sum to `m`.
    pub fn new(m: u64, seed: u64, povm_id: impl Into<String>, counts: BTreeMap<Vec<usize>, u64>) -> Result<Self> {
        if counts.values().any(|&f| f == 0) {
            return Err(TomoError::InvalidInput("outcome counts must be positive".into()));
        }
        let total: u64 = counts.values().sum();
        if total != m || m == 0 {
            return Err(TomoError::InvalidInput(format!("counts sum to {} but M = {}", total, m)));
        }
        let len = counts.keys().next().map(|k| k.len()).unwrap_or(0);
        if counts.keys().any(|k| k.len() != len) {
            return Err(TomoError::InvalidInput("outcomes have different lengths".into()));
        }
        Ok(OutcomeRecord { m, seed, povm_id: povm_id.into(), counts, diagnostics: SamplingDiagnostics::default() })
    }

    pub fn counts(&self) -> &BTreeMap<Vec<usize>, u64> {
        &self.counts
    }

    pub fn num_nonzero(&self) -> usize {
        self.counts.len()
    }

    /// Number of sites per outcome.
    pub fn outcome_len(&self) -> usize {
        self.counts.keys().next().map(|k| k.len()).unwrap_or(0)
    }

    /// `p_hat_k = f_k / M`; zero for outcomes never observed.
    pub fn empirical_probability(&self, outcome: &[usize]) -> f64 {
        self.counts.get(outcome).map_or(0.0, |&f| f as f64 / self.m as f64)
    }

    /// Observed outcomes in lexicographic order.
    pub fn nonzero_outcomes(&self) -> Vec<&[usize]> {
        self.counts.keys().map(|k| k.as_slice()).collect()
    }

    /// `(outcome, p_hat)` pairs in lexicographic order.
    pub fn empirical(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        let m = self.m as f64;
        self.counts.iter().map(move |(k, &f)| (k.as_slice(), f as f64 / m))
    }

    /// Checks every outcome against the site count and local sizes of a POVM.
    pub fn validate_against(&self, povm: &ProductPovm) -> Result<()> {
        for k in self.counts.keys() {
            if k.len() != povm.n() {
                return Err(TomoError::IndexOutOfRange(format!("outcome length {} for {} sites", k.len(), povm.n())));
            }
            povm.validate_outcome(k)?;
        }
        Ok(())
    }
}

/// JSON form with one-based outcome indices.
#[derive(Serialize, Deserialize)]
struct RecordJson {
    #[serde(rename = "M")]
    m: u64,
    seed: u64,
    povm_id: String,
    counts: Vec<(Vec<usize>, u64)>,
    #[serde(default)]
    diagnostics: SamplingDiagnostics,
}

impl Serialize for OutcomeRecord {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        RecordJson {
            m: self.m,
            seed: self.seed,
            povm_id: self.povm_id.clone(),
            counts: self.counts.iter().map(|(k, &f)| (k.iter().map(|i| i + 1).collect(), f)).collect(),
            diagnostics: self.diagnostics.clone(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for OutcomeRecord {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let j = RecordJson::deserialize(de)?;
        let mut counts = BTreeMap::new();
        for (k, f) in j.counts {
            if k.contains(&0) {
                return Err(D::Error::custom("outcome indices are one-based"));
            }
            if counts.insert(k.iter().map(|i| i - 1).collect::<Vec<_>>(), f).is_some() {
                return Err(D::Error::custom("duplicate outcome"));
            }
        }
        let mut rec = OutcomeRecord::new(j.m, j.seed, j.povm_id, counts).map_err(D::Error::custom)?;
        rec.diagnostics = j.diagnostics;
        Ok(rec)
    }
}

/// Identifier stored in outcome records.
pub fn povm_id(povm: &ProductPovm) -> String {
    if *povm == ProductPovm::local_sic(povm.n()) {
        format!("qubit-sic^{}", povm.n())
    } else {
        format!("product-n{}-k{}", povm.n(), povm.num_outcomes_f64())
    }
}

fn shot_rng(seed: u64, shot: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(shot);
    rng
}

/// Run `shot(rng) -> outcome` for every shot in parallel and merge the counts.
fn run_shots<F>(m: u64, seed: u64, shot: F) -> Result<(BTreeMap<Vec<usize>, u64>, SamplingDiagnostics)>
where
    F: Fn(&mut ChaCha20Rng, &mut SamplingDiagnostics) -> Result<Vec<usize>> + Sync,
{
    let chunks = m.div_ceil(SHOT_CHUNK);
    let parts: Vec<(BTreeMap<Vec<usize>, u64>, SamplingDiagnostics)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut counts = BTreeMap::new();
            let mut diag = SamplingDiagnostics::default();
            for s in c * SHOT_CHUNK..((c + 1) * SHOT_CHUNK).min(m) {
                let mut rng = shot_rng(seed, s);
                *counts.entry(shot(&mut rng, &mut diag)?).or_insert(0) += 1;
            }
            Ok((counts, diag))
        })
        .collect::<Result<_>>()?;
    let mut counts = BTreeMap::new();
    let mut diag = SamplingDiagnostics::default();
    for (part, d) in parts {
        for (k, f) in part {
            *counts.entry(k).or_insert(0) += f;
        }
        diag = diag.merge(d);
    }
    Ok((counts, diag))
}

/// Outcome shape of an enumerable POVM.
pub trait EnumerablePovm: DenseMeasurement {
    fn outcome_sizes(&self) -> Vec<usize>;
    fn id(&self) -> String;
}

impl EnumerablePovm for ProductPovm {
    fn outcome_sizes(&self) -> Vec<usize> {
        self.local_sizes()
    }

    fn id(&self) -> String {
        povm_id(self)
    }
}

impl EnumerablePovm for DensePovm {
    fn outcome_sizes(&self) -> Vec<usize> {
        vec![self.len()]
    }

    fn id(&self) -> String {
        format!("dense-dim{}-k{}", self.dim(), self.len())
    }
}

/// Draw `m` shots from the full probability vector of `state`.
pub fn sample_enumerate<P: EnumerablePovm + ?Sized>(
    povm: &P,
    state: &DenseOperator,
    m: u64,
    seed: u64,
) -> Result<OutcomeRecord> {
    if m == 0 {
        return Err(TomoError::InvalidInput("M must be >= 1".into()));
    }
    let probs = clamp_probabilities(measure_map_dense(povm, state)?)?;
    let total = probs.sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(TomoError::ProbabilityMass(total));
    }
    let mut acc = 0.0;
    let cdf: Vec<f64> = probs
        .values
        .iter()
        .map(|p| {
            acc += p / total;
            acc
        })
        .collect();
    let last_nonzero = probs.values.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let sizes = povm.outcome_sizes();
    let (counts, mut diag) = run_shots(m, seed, |rng, _| {
        let u: f64 = rng.gen();
        let k = cdf.partition_point(|&c| c <= u).min(last_nonzero);
        Ok(crate::povm::unflatten(k, &sizes))
    })?;
    diag.clamped = probs.clamped as u64;
    let mut rec = OutcomeRecord::new(m, seed, povm.id(), counts)?;
    rec.diagnostics = diag;
    Ok(rec)
}

/// [`sample_enumerate`] for an MPO state (contracted to a dense operator first).
pub fn sample_enumerate_tt(povm: &ProductPovm, state: &TtTensor, m: u64, seed: u64) -> Result<OutcomeRecord> {
    sample_enumerate(povm, &state.to_dense()?, m, seed)
}

/// Conditional distribution at site `l` given the left vector of the prefix.
/// Returns `None` when the prefix has (numerically) zero mass.
fn conditionals(
    c: &OutcomeContractor,
    v: &DVector<C64>,
    l: usize,
    diag: &mut SamplingDiagnostics,
) -> Result<Option<Vec<f64>>> {
    let w = c.extension_weights(v, l);
    let mass: f64 = w.iter().sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(w.len());
    for x in w {
        let q = x / mass;
        if q < -CLAMP_TOLERANCE {
            return Err(TomoError::NegativeProbability { value: q });
        }
        if q < 0.0 {
            diag.clamped += 1;
            out.push(0.0);
        } else {
            out.push(q);
        }
    }
    let s: f64 = out.iter().sum();
    Ok(Some(out.into_iter().map(|q| q / s).collect()))
}

fn draw_index(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let last = q.iter().rposition(|&x| x > 0.0).unwrap_or(0);
    for (i, &x) in q.iter().enumerate() {
        acc += x;
        if u < acc {
            return i.min(last);
        }
    }
    last
}

/// Draw `m` shots by the chain rule: site 1 from its marginal, then each
/// later site conditioned on the sampled prefix. Requires a PSD state.
pub fn sample_sequential(povm: &ProductPovm, state: &TtTensor, m: u64, seed: u64) -> Result<OutcomeRecord> {
    if m == 0 {
        return Err(TomoError::InvalidInput("M must be >= 1".into()));
    }
    let c = OutcomeContractor::new(povm, state)?;
    let trace = state.trace();
    if (trace.re - 1.0).abs() > MASS_TOLERANCE || trace.im.abs() > MASS_TOLERANCE {
        return Err(TomoError::ProbabilityMass(trace.re));
    }
    let n = c.n();
    let root = DVector::from_element(1, C64::new(1.0, 0.0));
    let (counts, diag) = run_shots(m, seed, |rng, diag| {
        'attempt: for attempt in 0..MAX_SHOT_ATTEMPTS {
            if attempt > 0 {
                diag.retries += 1;
            }
            let mut v = root.clone();
            let mut outcome = Vec::with_capacity(n);
            for l in 0..n {
                let Some(q) = conditionals(&c, &v, l, diag)? else {
                    continue 'attempt;
                };
                let i = draw_index(&q, rng.gen());
                outcome.push(i);
                v = c.advance(&v, l, i);
            }
            return Ok(outcome);
        }
        Err(TomoError::Sampling(format!("zero-mass prefix in {} consecutive attempts", MAX_SHOT_ATTEMPTS)))
    })?;
    let mut rec = OutcomeRecord::new(m, seed, povm_id(povm), counts)?;
    rec.diagnostics = diag;
    Ok(rec)
}

/// Product of the conditionals the sequential sampler uses along `outcome`.
pub fn chain_probability(c: &OutcomeContractor, outcome: &[usize]) -> Result<f64> {
    if outcome.len() != c.n() {
        return Err(TomoError::IndexOutOfRange("outcome length must equal n".into()));
    }
    let mut v = DVector::from_element(1, C64::new(1.0, 0.0));
    let mut p = 1.0;
    let mut diag = SamplingDiagnostics::default();
    for (l, &i) in outcome.iter().enumerate() {
        if i >= c.local_sizes()[l] {
            return Err(TomoError::IndexOutOfRange(format!("index {} at site {}", i, l)));
        }
        match conditionals(c, &v, l, &mut diag)? {
            Some(q) => p *= q[i],
            None => return Ok(0.0),
        }
        v = c.advance(&v, l, i);
    }
    Ok(p)
}
