//! Constrained least-squares estimation over MPOs of bounded rank.
//!
//! The objective is `g(rho) = ||A(rho) - p_hat||^2`. It is evaluated without
//! touching unobserved outcomes:
//! `g(rho) = <rho, Phi(rho)> - 2 sum_k p_hat_k <A_k, rho> + sum_k p_hat_k^2`,
//! where `Phi(rho) = sum_k <A_k, rho> A_k` is applied site by site.
//!
//! [`pgd`] iterates `rho <- P(rho - mu_t grad g(rho))` where `P` rounds to the
//! target ranks, symmetrizes and renormalizes the trace. [`psgd`] replaces the
//! gradient by partial sums over mini-batches drawn from the observed outcomes
//! plus a few unobserved ones.

mod init;
mod objective;
mod project;
mod solver;

pub use init::{preset_psgd_step, preset_step, random_init, spectral_init, theorem3_window, InitKind, Theorem3Window};
pub use objective::{loss, wirtinger_gradient, EmpiricalData, Gradient};
pub use project::{project_dense, project_mpo, psd_project, recovery_error, simplex_projection};
pub use solver::{initial_state, pgd, pgd_data, pgd_with_init, psgd, psgd_data, psgd_with_init};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::tt::{max_rank_at_cut, validate_ranks, TtTensor};

/// Where the iteration starts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    #[default]
    Spectral,
    Random {
        seed: u64,
    },
    /// Supplied by the caller through [`pgd_with_init`] / [`psgd_with_init`].
    Provided,
}

impl Init {
    pub fn kind(&self) -> InitKind {
        match self {
            Init::Spectral => InitKind::Spectral,
            Init::Random { .. } => InitKind::Random,
            Init::Provided => InitKind::Provided,
        }
    }
}

/// How the gradient step is formed before projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Materialize `d^n x d^n` matrices and project with TT-SVD (small `n`).
    Dense,
    #[default]
    Tt,
}

fn default_lambda() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_batch() -> usize {
    32
}
fn default_round_tol() -> f64 {
    1e-14
}
fn default_design_t() -> usize {
    2
}
fn default_plateau_tol() -> f64 {
    1e-10
}
fn default_plateau_window() -> usize {
    10
}

/// Default iteration caps: PGD iterations and PSGD epochs.
pub const DEFAULT_PGD_ITERS: usize = 200;
pub const DEFAULT_PSGD_EPOCHS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Target bond ranks `r_1..r_{n-1}`.
    pub ranks: Vec<usize>,
    /// Base step size.
    pub mu0: f64,
    /// Step decay per iteration (PGD) or epoch (PSGD); `0 < lambda <= 1`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Multiply `mu0` by `2^n`.
    #[serde(default = "default_true")]
    pub scale_2n: bool,
    /// Iterations (PGD) or epochs (PSGD); defaults 200 and 50.
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub backend: Backend,
    /// PSGD outcomes per epoch `N`; default `640 n`.
    #[serde(default)]
    pub epoch_size: Option<usize>,
    /// PSGD mini-batch size `B`.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Relative tolerance used when compressing the empirical operator.
    #[serde(default = "default_round_tol")]
    pub tt_round_tol: f64,
    /// Keep a per-iteration log of loss and error.
    #[serde(default = "default_true")]
    pub record_trace: bool,
    /// Seed for PSGD subset selection and shuffling.
    #[serde(default)]
    pub seed: u64,
    /// Design order `t` of the POVM, used for the `gamma_t` diagnostic
    /// (`gamma_t = gamma` for `t = 2` and `1` for `t > 2`).
    #[serde(default = "default_design_t")]
    pub design_t: usize,
    /// Stop when the relative loss change over `plateau_window` iterations is at most this.
    #[serde(default = "default_plateau_tol")]
    pub plateau_tol: f64,
    #[serde(default = "default_plateau_window")]
    pub plateau_window: usize,
}

impl EstimatorConfig {
    pub fn new(ranks: Vec<usize>, mu0: f64) -> Self {
        EstimatorConfig {
            ranks,
            mu0,
            lambda: default_lambda(),
            scale_2n: true,
            max_iters: None,
            init: Init::Spectral,
            backend: Backend::Tt,
            epoch_size: None,
            batch_size: default_batch(),
            tt_round_tol: default_round_tol(),
            record_trace: true,
            seed: 0,
            design_t: default_design_t(),
            plateau_tol: default_plateau_tol(),
            plateau_window: default_plateau_window(),
        }
    }

    /// PGD configuration with a step preset from the experiments: `fixed`
    /// selects the constant-step variant (`lambda = 1`).
    pub fn preset(n: usize, d: usize, rbar: usize, init: Init, fixed: bool) -> Result<Self> {
        let (mu0, lambda) = preset_step(init.kind(), rbar, fixed)?;
        let mut cfg = EstimatorConfig::new(uniform_ranks(n, d, rbar), mu0);
        cfg.lambda = lambda;
        cfg.init = init;
        Ok(cfg)
    }

    /// PSGD configuration with the step preset for `init` and `N = 640 n`, `B = 32`.
    pub fn preset_psgd(n: usize, d: usize, rbar: usize, init: Init) -> Result<Self> {
        let (mu0, lambda, scale_2n) = preset_psgd_step(init.kind())?;
        let mut cfg = EstimatorConfig::new(uniform_ranks(n, d, rbar), mu0);
        cfg.lambda = lambda;
        cfg.scale_2n = scale_2n;
        cfg.init = init;
        Ok(cfg)
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_backend(mut self, backend: Backend) -> Self {
        self.backend = backend;
        self
    }

    pub fn with_max_iters(mut self, iters: usize) -> Self {
        self.max_iters = Some(iters);
        self
    }

    /// Step size at iteration (or epoch) `tau`.
    pub fn step(&self, n: usize, tau: usize) -> f64 {
        let scale = if self.scale_2n { 2f64.powi(n as i32) } else { 1.0 };
        self.mu0 * scale * self.lambda.powi(tau as i32)
    }

    pub fn epoch_size_for(&self, n: usize) -> usize {
        self.epoch_size.unwrap_or(640 * n)
    }

    pub(crate) fn validate(&self, n: usize, d: usize) -> Result<()> {
        validate_ranks(n, d, &self.ranks)?;
        if !(self.mu0 > 0.0) || !self.mu0.is_finite() {
            return Err(TomoError::InvalidInput(format!("mu0 = {} must be positive", self.mu0)));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(TomoError::InvalidInput(format!("lambda = {} must lie in (0, 1]", self.lambda)));
        }
        if self.batch_size == 0 || self.batch_size > self.epoch_size_for(n) {
            return Err(TomoError::InvalidInput(format!(
                "batch size {} must lie in [1, N = {}]",
                self.batch_size,
                self.epoch_size_for(n)
            )));
        }
        if !(self.tt_round_tol >= 0.0) || self.plateau_window == 0 {
            return Err(TomoError::InvalidInput("tt_round_tol must be >= 0 and plateau_window >= 1".into()));
        }
        Ok(())
    }
}

/// `r_l = min(rbar, largest admissible rank at cut l)`.
pub fn uniform_ranks(n: usize, d: usize, rbar: usize) -> Vec<usize> {
    (1..n).map(|l| rbar.min(max_rank_at_cut(n, d, l))).collect()
}

/// Why the iteration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergedReason {
    /// Relative loss change over the plateau window fell below tolerance.
    Plateau,
    MaxIters,
}

/// One logged iterate. Row 0 is the initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    /// Frobenius distance to the supplied truth.
    pub error: Option<f64>,
    /// Step size used to reach this iterate (0 for the initialization).
    pub step: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct Estimate {
    pub state: TtTensor,
    pub trace_log: Vec<TraceRow>,
    /// PGD iterations or PSGD epochs.
    pub iterations_run: usize,
    pub converged_reason: ConvergedReason,
    pub final_loss: f64,
    pub init_error: Option<f64>,
    pub final_error: Option<f64>,
    /// PSGD epoch size and batch size, when applicable.
    pub epoch_size: Option<usize>,
    pub batch_size: Option<usize>,
}

impl Estimate {
    pub fn converged(&self) -> bool {
        self.converged_reason == ConvergedReason::Plateau
    }
}
