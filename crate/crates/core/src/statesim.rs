//! Ground-truth states: random matrix product density operators and simple
//! reference states.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::tt::{max_rank_at_cut, Core, Truncation, TtTensor};
use crate::C64;

fn default_d() -> usize {
    2
}

fn default_k_l() -> usize {
    10
}

/// Parameters of a random MPDO. The MPO bond dimension is `kappa^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MpdoConfig {
    pub n: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    pub kappa: usize,
    /// Purification size per site; 1 gives a pure state.
    #[serde(default = "default_k_l")]
    pub k_l: usize,
    /// Optional per-site override of `k_l`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_l_sites: Option<Vec<usize>>,
    pub seed: u64,
}

impl MpdoConfig {
    pub fn new(n: usize, kappa: usize, seed: u64) -> Self {
        MpdoConfig { n, d: 2, kappa, k_l: default_k_l(), k_l_sites: None, seed }
    }

    pub fn with_k_l(mut self, k_l: usize) -> Self {
        self.k_l = k_l;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d < 2 || self.kappa == 0 || self.k_l == 0 {
            return Err(TomoError::InvalidInput("random MPDO needs n >= 1, d >= 2, kappa >= 1, k_l >= 1".into()));
        }
        if let Some(ks) = &self.k_l_sites {
            if ks.len() != self.n || ks.contains(&0) {
                return Err(TomoError::InvalidInput("k_l_sites must list n positive values".into()));
            }
        }
        Ok(())
    }

    fn k_at(&self, l: usize) -> usize {
        self.k_l_sites.as_ref().map_or(self.k_l, |ks| ks[l])
    }
}

/// Seed used for the single retry when a draw has a degenerate trace.
fn retry_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Random MPDO with cores `X^{i,j} = sum_a A^{i,a} (x) conj(A^{j,a})`, entries
/// of `A` uniform in `[-1, 1]` (real and imaginary parts), normalized to unit
/// trace by scaling every core with `trace^{-1/n}`.
pub fn random_mpdo(config: &MpdoConfig) -> Result<TtTensor> {
    config.validate()?;
    match draw_mpdo(config, config.seed) {
        Err(TomoError::DegenerateTrace(_)) => draw_mpdo(config, retry_seed(config.seed)),
        other => other,
    }
}

fn draw_mpdo(config: &MpdoConfig, seed: u64) -> Result<TtTensor> {
    let mut tt = unnormalized_mpdo(config, seed)?;
    let trace = tt.trace();
    if !(trace.re > 0.0) || trace.im.abs() > 1e-10 * trace.re || !trace.re.is_finite() {
        return Err(TomoError::DegenerateTrace(trace.re));
    }
    let scale = C64::new(trace.re.powf(-1.0 / config.n as f64), 0.0);
    for core in tt.cores_mut() {
        core.scale_mut(scale);
    }
    cap_ranks(tt)
}

fn unnormalized_mpdo(config: &MpdoConfig, seed: u64) -> Result<TtTensor> {
    let (n, d, kappa) = (config.n, config.d, config.kappa);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut cores = Vec::with_capacity(n);
    for l in 0..n {
        let left = if l == 0 { 1 } else { kappa };
        let right = if l + 1 == n { 1 } else { kappa };
        let k = config.k_at(l);
        // a[i][a] is a left x right matrix
        let a: Vec<Vec<DMatrix<C64>>> = (0..d)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        DMatrix::from_fn(left, right, |_, _| {
                            C64::new(rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))
                        })
                    })
                    .collect()
            })
            .collect();
        let mut core = Core::zeros(left * left, d * d, right * right);
        for i in 0..d {
            for j in 0..d {
                let s = crate::tt::fuse(i, j, d);
                for kk in 0..k {
                    let (ai, aj) = (&a[i][kk], &a[j][kk]);
                    for (al, alp) in index_pairs(left) {
                        for (be, bep) in index_pairs(right) {
                            let v = ai[(al, be)] * aj[(alp, bep)].conj();
                            let (row, col) = (al * left + alp, be * right + bep);
                            core.set(row, s, col, core.get(row, s, col) + v);
                        }
                    }
                }
            }
        }
        cores.push(core);
    }
    TtTensor::new(d, cores)
}

fn index_pairs(m: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..m).flat_map(move |x| (0..m).map(move |y| (x, y)))
}

/// Ranks above the largest admissible value at a cut carry no extra
/// information; compress them exactly.
fn cap_ranks(tt: TtTensor) -> Result<TtTensor> {
    let (n, d) = (tt.n(), tt.d());
    let ranks = tt.bond_ranks();
    let caps: Vec<usize> = (1..n).map(|l| max_rank_at_cut(n, d, l)).collect();
    if ranks.iter().zip(&caps).all(|(r, c)| r <= c) {
        return Ok(tt);
    }
    let target = ranks.iter().zip(&caps).map(|(&r, &c)| r.min(c)).collect();
    tt.round(&Truncation::Ranks(target))
}

/// `trace(rho^2)`, the squared Frobenius norm of a Hermitian state.
pub fn purity(state: &TtTensor) -> f64 {
    state.inner(state).map(|z| z.re).unwrap_or(f64::NAN)
}

/// `I / d^n` with all bond ranks 1.
pub fn maximally_mixed(n: usize, d: usize) -> Result<TtTensor> {
    if n == 0 {
        return Err(TomoError::InvalidInput("n must be >= 1".into()));
    }
    TtTensor::product(&vec![DMatrix::identity(d, d) / C64::new(d as f64, 0.0); n])
}

/// `|b><b|` for a qubit bitstring such as `"0110"`.
pub fn pure_product(bits: &str) -> Result<TtTensor> {
    let ops = bits
        .chars()
        .map(|ch| {
            let k = match ch {
                '0' => 0,
                '1' => 1,
                _ => return Err(TomoError::InvalidInput(format!("bitstring character {:?}", ch))),
            };
            let mut m = DMatrix::zeros(2, 2);
            m[(k, k)] = C64::new(1.0, 0.0);
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    if ops.is_empty() {
        return Err(TomoError::InvalidInput("empty bitstring".into()));
    }
    TtTensor::product(&ops)
}

/// `|GHZ><GHZ|` with `|GHZ> = (|0...0> + |1...1>) / sqrt(2)`.
///
/// The operator is a sum of four product terms `E_ab^{(x) n} / 2`, so its bond
/// ranks are 4 (1 for `n = 1`).
pub fn ghz_density(n: usize) -> Result<TtTensor> {
    if n == 0 {
        return Err(TomoError::InvalidInput("n must be >= 1".into()));
    }
    if n == 1 {
        return TtTensor::product(&[DMatrix::from_element(2, 2, C64::new(0.5, 0.0))]);
    }
    // term t = (a, b) with a, b in {0, 1}; E_ab has fused index fuse(a, b)
    let terms: Vec<usize> = (0..4).map(|t| crate::tt::fuse(t & 1, t >> 1, 2)).collect();
    let one = C64::new(1.0, 0.0);
    let cores = (0..n)
        .map(|l| {
            let left = if l == 0 { 1 } else { 4 };
            let right = if l + 1 == n { 1 } else { 4 };
            let mut core = Core::zeros(left, 4, right);
            for (t, &s) in terms.iter().enumerate() {
                let v = if l == 0 { C64::new(0.5, 0.0) } else { one };
                core.set(if l == 0 { 0 } else { t }, s, if l + 1 == n { 0 } else { t }, v);
            }
            core
        })
        .collect();
    TtTensor::new(2, cores)
}
