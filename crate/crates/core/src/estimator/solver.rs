use std::collections::HashSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::init::{random_init, spectral_init};
use super::objective::EmpiricalData;
use super::project::{project_dense, project_mpo, recovery_error};
use super::{
    Backend, ConvergedReason, Estimate, EstimatorConfig, Init, TraceRow, DEFAULT_PGD_ITERS, DEFAULT_PSGD_EPOCHS,
};
use crate::error::{Result, TomoError};
use crate::povm::{weighted_element_sum, ProductPovm};
use crate::sampler::OutcomeRecord;
use crate::tt::{DenseOperator, TtTensor};

/// Above this many outcomes the PSGD filler is drawn by rejection instead of
/// by enumerating the unobserved outcomes.
const FILLER_ENUMERATION_CAP: usize = 1 << 20;

/// Starting point selected by `config.init`.
pub fn initial_state(data: &EmpiricalData, config: &EstimatorConfig) -> Result<TtTensor> {
    let povm = data.povm();
    match config.init {
        Init::Spectral => spectral_init(data, &config.ranks),
        Init::Random { seed } => random_init(&config.ranks, povm.n(), povm.d(), seed),
        Init::Provided => Err(TomoError::InvalidInput("init = provided requires an explicit initial state".into())),
    }
}

pub fn pgd(
    record: &OutcomeRecord,
    povm: &ProductPovm,
    config: &EstimatorConfig,
    truth: Option<&TtTensor>,
) -> Result<Estimate> {
    let data = EmpiricalData::with_tolerance(record, povm, config.tt_round_tol)?;
    pgd_data(&data, config, None, truth)
}

pub fn pgd_with_init(
    record: &OutcomeRecord,
    povm: &ProductPovm,
    config: &EstimatorConfig,
    init: &TtTensor,
    truth: Option<&TtTensor>,
) -> Result<Estimate> {
    let data = EmpiricalData::with_tolerance(record, povm, config.tt_round_tol)?;
    pgd_data(&data, config, Some(init), truth)
}

/// PGD on prepared data; `init` overrides `config.init`.
pub fn pgd_data(
    data: &EmpiricalData,
    config: &EstimatorConfig,
    init: Option<&TtTensor>,
    truth: Option<&TtTensor>,
) -> Result<Estimate> {
    let n = data.n();
    let mut run = Run::start(data, config, init, truth)?;
    let max_iters = config.max_iters.unwrap_or(DEFAULT_PGD_ITERS);
    for tau in 0..max_iters {
        let mu = config.step(n, tau);
        let next = match config.backend {
            Backend::Tt => {
                let grad = data.gradient(&run.state)?;
                let raw = TtTensor::sum(&[
                    run.state.clone(),
                    grad.channel.scale_real(-mu),
                    grad.empirical.scale_real(mu),
                ])?;
                check_finite(&raw, tau + 1)?;
                project_mpo(&raw, &config.ranks)?
            }
            Backend::Dense => {
                let dense = run.state.to_dense()?;
                let grad = data.gradient_dense(&dense)?;
                let raw = DenseOperator::new(n, dense.d(), dense.matrix() - grad.matrix() * crate::C64::new(mu, 0.0))?;
                if raw.matrix().iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(TomoError::NonFinite { iteration: tau + 1 });
                }
                project_dense(&raw, &config.ranks)?
            }
        };
        if run.advance(next, mu)? {
            break;
        }
    }
    run.finish(None, None)
}

pub fn psgd(
    record: &OutcomeRecord,
    povm: &ProductPovm,
    config: &EstimatorConfig,
    truth: Option<&TtTensor>,
) -> Result<Estimate> {
    let data = EmpiricalData::with_tolerance(record, povm, config.tt_round_tol)?;
    psgd_data(&data, config, None, truth)
}

pub fn psgd_with_init(
    record: &OutcomeRecord,
    povm: &ProductPovm,
    config: &EstimatorConfig,
    init: &TtTensor,
    truth: Option<&TtTensor>,
) -> Result<Estimate> {
    let data = EmpiricalData::with_tolerance(record, povm, config.tt_round_tol)?;
    psgd_data(&data, config, Some(init), truth)
}

/// PSGD on prepared data. Each epoch takes every observed outcome plus
/// seeded unobserved fillers up to `N` (capped at `K`), shuffles them and runs
/// `floor(N / B)` projected steps on consecutive batches. The step decays per epoch.
pub fn psgd_data(
    data: &EmpiricalData,
    config: &EstimatorConfig,
    init: Option<&TtTensor>,
    truth: Option<&TtTensor>,
) -> Result<Estimate> {
    let povm = data.povm();
    let n = data.n();
    let nnz = data.terms().len();
    let k = povm.num_outcomes_f64();
    let requested = config.epoch_size_for(n);
    let epoch_size = if (requested as f64) > k { k as usize } else { requested };
    if epoch_size < nnz {
        return Err(TomoError::InvalidInput(format!(
            "epoch size N = {} is below the {} observed outcomes",
            epoch_size, nnz
        )));
    }
    let batch = config.batch_size;
    if batch == 0 || batch > epoch_size {
        return Err(TomoError::InvalidInput(format!("batch size {} must lie in [1, N = {}]", batch, epoch_size)));
    }

    let observed: Vec<(Vec<usize>, f64)> = data.terms().to_vec();
    let observed_set: HashSet<&[usize]> = observed.iter().map(|(o, _)| o.as_slice()).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut run = Run::start(data, config, init, truth)?;
    let epochs = config.max_iters.unwrap_or(DEFAULT_PSGD_EPOCHS);
    let mut iteration = 0;
    for epoch in 0..epochs {
        let mu = config.step(n, epoch);
        let mut subset = observed.clone();
        subset.extend(draw_fillers(povm, &observed_set, epoch_size - nnz, &mut rng)?.into_iter().map(|o| (o, 0.0)));
        subset.shuffle(&mut rng);

        let mut state = run.state.clone();
        for chunk in subset.chunks_exact(batch) {
            iteration += 1;
            let outcomes: Vec<Vec<usize>> = chunk.iter().map(|(o, _)| o.clone()).collect();
            let probs = data.outcome_probabilities(&state, &outcomes)?;
            let weighted: Vec<(Vec<usize>, f64)> =
                chunk.iter().zip(probs).map(|((o, p_hat), p)| (o.clone(), p - p_hat)).collect();
            let grad = weighted_element_sum(povm, &weighted)?;
            let raw = state.add(&grad.scale_real(-mu))?;
            check_finite(&raw, iteration)?;
            state = project_mpo(&raw, &config.ranks)?;
        }
        if run.advance(state, mu)? {
            break;
        }
    }
    run.finish(Some(epoch_size), Some(batch))
}

/// `count` distinct outcomes outside `observed`, uniformly at random.
pub(super) fn draw_fillers(
    povm: &ProductPovm,
    observed: &HashSet<&[usize]>,
    count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<Vec<usize>>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let k = povm.num_outcomes_f64();
    let zeros = k - observed.len() as f64;
    if k <= FILLER_ENUMERATION_CAP as f64 && 2.0 * count as f64 > zeros {
        let mut pool: Vec<Vec<usize>> =
            povm.outcomes()?.into_iter().filter(|o| !observed.contains(o.as_slice())).collect();
        let (chosen, _) = pool.partial_shuffle(rng, count);
        return Ok(chosen.to_vec());
    }
    let sizes = povm.local_sizes();
    let mut chosen: HashSet<Vec<usize>> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let o: Vec<usize> = sizes.iter().map(|&s| rng.gen_range(0..s)).collect();
        if observed.contains(o.as_slice()) || chosen.contains(&o) {
            continue;
        }
        chosen.insert(o.clone());
        out.push(o);
    }
    Ok(out)
}

fn check_finite(t: &TtTensor, iteration: usize) -> Result<()> {
    let finite = t.cores().iter().all(|c| c.data().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    if finite {
        Ok(())
    } else {
        Err(TomoError::NonFinite { iteration })
    }
}

/// Iterate bookkeeping shared by both solvers: logging, error tracking and
/// the plateau rule.
struct Run<'a> {
    data: &'a EmpiricalData,
    config: &'a EstimatorConfig,
    truth: Option<&'a TtTensor>,
    state: TtTensor,
    losses: Vec<f64>,
    log: Vec<TraceRow>,
    init_error: Option<f64>,
    last_error: Option<f64>,
    reason: ConvergedReason,
    started: Instant,
}

impl<'a> Run<'a> {
    fn start(
        data: &'a EmpiricalData,
        config: &'a EstimatorConfig,
        init: Option<&TtTensor>,
        truth: Option<&'a TtTensor>,
    ) -> Result<Self> {
        let povm = data.povm();
        config.validate(povm.n(), povm.d())?;
        if let Some(t) = truth {
            if t.n() != povm.n() || t.d() != povm.d() {
                return Err(TomoError::ShapeMismatch("truth does not match the POVM".into()));
            }
        }
        let started = Instant::now();
        let state = match init {
            Some(s) => prepare_provided(s, povm, &config.ranks)?,
            None => initial_state(data, config)?,
        };
        let loss = data.loss(&state)?;
        if !loss.is_finite() {
            return Err(TomoError::NonFinite { iteration: 0 });
        }
        let error = truth.map(|t| recovery_error(&state, t)).transpose()?;
        let mut run = Run {
            data,
            config,
            truth,
            state,
            losses: vec![loss],
            log: Vec::new(),
            init_error: error,
            last_error: error,
            reason: ConvergedReason::MaxIters,
            started,
        };
        run.push_row(0, loss, error, 0.0);
        Ok(run)
    }

    fn push_row(&mut self, iter: usize, loss: f64, error: Option<f64>, step: f64) {
        if self.config.record_trace {
            let wall_ms = self.started.elapsed().as_secs_f64() * 1e3;
            self.log.push(TraceRow { iter, loss, error, step, wall_ms });
        }
    }

    /// Accept the next iterate; returns `true` once the loss has plateaued.
    fn advance(&mut self, next: TtTensor, step: f64) -> Result<bool> {
        let iter = self.losses.len();
        let loss = self.data.loss(&next)?;
        if !loss.is_finite() {
            return Err(TomoError::NonFinite { iteration: iter });
        }
        self.state = next;
        self.last_error = self.truth.map(|t| recovery_error(&self.state, t)).transpose()?;
        self.losses.push(loss);
        self.push_row(iter, loss, self.last_error, step);
        let w = self.config.plateau_window;
        if self.losses.len() > w {
            let prev = self.losses[self.losses.len() - 1 - w];
            let change = (prev - loss).abs() / prev.abs().max(f64::MIN_POSITIVE);
            if change <= self.config.plateau_tol {
                self.reason = ConvergedReason::Plateau;
                return Ok(true);
            }
        }
        Ok(false)
    }

    fn finish(self, epoch_size: Option<usize>, batch_size: Option<usize>) -> Result<Estimate> {
        Ok(Estimate {
            final_loss: *self.losses.last().expect("initial loss"),
            iterations_run: self.losses.len() - 1,
            state: self.state,
            trace_log: self.log,
            converged_reason: self.reason,
            init_error: self.init_error,
            final_error: self.last_error,
            epoch_size,
            batch_size,
        })
    }
}

/// A caller-supplied start is used as is when it already satisfies the rank
/// caps, Hermiticity and unit trace; otherwise it is projected.
fn prepare_provided(init: &TtTensor, povm: &ProductPovm, ranks: &[usize]) -> Result<TtTensor> {
    if init.n() != povm.n() || init.d() != povm.d() {
        return Err(TomoError::ShapeMismatch("initial state does not match the POVM".into()));
    }
    let within = init.bond_ranks().iter().zip(ranks).all(|(a, b)| a <= b);
    if within && (init.trace() - crate::C64::new(1.0, 0.0)).norm() <= 1e-10 && init.is_hermitian(1e-10) {
        Ok(init.clone())
    } else {
        project_mpo(init, ranks)
    }
}
