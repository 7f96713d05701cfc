use serde::{Deserialize, Serialize};

use super::objective::EmpiricalData;
use super::project::project_mpo;
use crate::error::{Result, TomoError};
use crate::statesim::{random_mpdo, MpdoConfig};
use crate::tt::TtTensor;

/// `P(sum_k K (d^n + 1) / d^n p_hat_k A_k)`.
pub fn spectral_init(data: &EmpiricalData, ranks: &[usize]) -> Result<TtTensor> {
    let povm = data.povm();
    let dn = (povm.d() as f64).powi(povm.n() as i32);
    let scale = povm.num_outcomes_f64() * (dn + 1.0) / dn;
    project_mpo(&data.empirical_operator()?.scale_real(scale), ranks)
}

/// A random MPDO with `kappa = ceil(sqrt(max rank))`, projected to `ranks`
/// when `kappa^2` exceeds them.
pub fn random_init(ranks: &[usize], n: usize, d: usize, seed: u64) -> Result<TtTensor> {
    let rbar = ranks.iter().copied().max().unwrap_or(1);
    let kappa = (rbar as f64).sqrt().ceil() as usize;
    let mut cfg = MpdoConfig::new(n, kappa.max(1), seed);
    cfg.d = d;
    let rho = random_mpdo(&cfg)?;
    if rho.bond_ranks().iter().zip(ranks).any(|(a, b)| a > b) {
        project_mpo(&rho, ranks)
    } else {
        Ok(rho)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Spectral,
    Random,
    Provided,
}

/// Step presets `(mu0, lambda)` used with `mu_t = mu0 2^n lambda^t`.
///
/// Diminishing schedule (`lambda = 0.9`): random init `mu0 = 5/4` (`rbar = 1`)
/// or `5/8` (`rbar = 4`); spectral init `5/8` or `5/16`. Constant schedule
/// (`lambda = 1`): `5/32` (random) or `1/16` (spectral), any `rbar`.
pub fn preset_step(init: InitKind, rbar: usize, fixed: bool) -> Result<(f64, f64)> {
    let mu0 = match (init, fixed, rbar) {
        (InitKind::Random, true, _) => 5.0 / 32.0,
        (InitKind::Spectral, true, _) => 1.0 / 16.0,
        (InitKind::Random, false, 1) => 5.0 / 4.0,
        (InitKind::Random, false, 4) => 5.0 / 8.0,
        (InitKind::Spectral, false, 1) => 5.0 / 8.0,
        (InitKind::Spectral, false, 4) => 5.0 / 16.0,
        _ => {
            return Err(TomoError::InvalidInput(format!(
                "no step preset for init {:?}, rbar = {}, fixed = {}",
                init, rbar, fixed
            )))
        }
    };
    Ok((mu0, if fixed { 1.0 } else { 0.9 }))
}

/// PSGD presets `(mu0, lambda, scale_2n)`: `5/4 * 2^n * 0.9^t` from a random
/// start and `10 * 0.9^t` (no `2^n` factor) from the spectral start.
pub fn preset_psgd_step(init: InitKind) -> Result<(f64, f64, bool)> {
    match init {
        InitKind::Random => Ok((5.0 / 4.0, 0.9, true)),
        InitKind::Spectral => Ok((10.0, 0.9, false)),
        InitKind::Provided => Err(TomoError::InvalidInput("no PSGD step preset for a provided init".into())),
    }
}

/// Step-size window and initialization radius under which the linear
/// convergence guarantee for PGD applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem3Window {
    pub mu_lower: f64,
    pub mu_upper: f64,
    /// Largest admissible `||rho_0 - rho*||_F`.
    pub init_radius: f64,
    /// The window is non-empty and the initialization lies inside the radius.
    pub admissible: bool,
}

/// `k` is the number of outcomes `K`, `delta` the 2-design defect, `sigma_min`
/// the smallest TT singular value of the truth, `init_error = ||rho_0 - rho*||_F`.
pub fn theorem3_window(n: usize, d: usize, k: f64, delta: f64, sigma_min: f64, init_error: f64) -> Theorem3Window {
    let (nf, df) = (n as f64, d as f64);
    let dn = df.powi(n as i32);
    let c = 600.0 * nf / sigma_min * init_error;
    let mu_lower = c / (1.0 + c) * k * (dn + 1.0) / (dn * (1.0 - delta));
    let mu_upper = (df - 1.0) * (dn + 1.0) * (1.0 - delta) * k / ((1.0 + delta).powi(2) * dn * df);
    let init_radius =
        sigma_min * (df - 1.0) * (1.0 - delta).powi(2) / (600.0 * nf * (1.0 + delta * delta + (4.0 * df - 2.0) * delta));
    Theorem3Window { mu_lower, mu_upper, init_radius, admissible: mu_lower < mu_upper && init_error < init_radius }
}
