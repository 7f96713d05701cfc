//! `mpotomo` command-line driver: state generation, measurement simulation,
//! estimation, POVM/design checks, gamma diagnostics and experiment sweeps.
//!
//! Every output embeds a [`io::Provenance`] block (tool version, seed and the
//! SHA-256 of the resolved command inputs). CSV numeric fields are written
//! with 12 significant digits.

pub mod error;
pub mod experiment;
pub mod io;
mod plot;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mpotomo::estimator::{
    pgd, pgd_with_init, psgd, psgd_with_init, Backend, Estimate, EstimatorConfig, Init, TraceRow,
};
use mpotomo::povm::{
    check_sic, check_t_design, gamma, sic_qubit, DensePovm, DensePovmJson, GammaMethod, LocalPovmJson,
    ProductPovmJson, SicReport, VectorSetJson,
};
use mpotomo::sampler::{sample_enumerate_tt, sample_sequential};
use mpotomo::statesim::{ghz_density, maximally_mixed, pure_product, random_mpdo, MpdoConfig};
use mpotomo::tt::TtTensor;
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::io::{
    fmt_f64, fmt_opt, load_record, load_state, read_bytes, read_json, sha256_hex, write_json, write_text, PovmSource,
    Provenance, RecordFile, StateFile,
};

/// Environment variable read when `--threads` is absent.
pub const THREADS_ENV: &str = "MPOTOMO_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mpotomo", version, about = "Tomography of MPO states from product POVM measurements")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON configuration: MPDO parameters (generate), estimator config
    /// (estimate) or experiment spec (experiment).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Dense,
    Tt,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Dense => Backend::Dense,
            BackendArg::Tt => Backend::Tt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum StateKind {
    Mpdo,
    MaximallyMixed,
    Product,
    Ghz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Sequential,
    Enumerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Pgd,
    Psgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Spectral,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GammaArg {
    Exhaustive,
    Beam,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a ground-truth state to `state.json`.
    Generate {
        #[arg(long, value_enum, default_value = "mpdo")]
        kind: StateKind,
        #[arg(long)]
        n: Option<usize>,
        /// MPDO purification bond dimension; the MPO bond dimension is kappa^2.
        #[arg(long)]
        kappa: Option<usize>,
        #[arg(long)]
        k_l: Option<usize>,
        /// Basis string for `--kind product`, e.g. `0101`.
        #[arg(long)]
        bits: Option<String>,
    },
    /// Simulate `M` shots of a product POVM on a state; writes `record.json`.
    Measure {
        #[arg(long)]
        state: PathBuf,
        /// `local-sic` or a POVM JSON file.
        #[arg(long, default_value = io::LOCAL_SIC)]
        povm: String,
        #[arg(long, short = 'm')]
        shots: u64,
        #[arg(long, value_enum, default_value = "sequential")]
        sampler: SamplerArg,
    },
    /// Recover a state from a record; writes `estimate.json` and `trace.csv`.
    Estimate {
        #[arg(long)]
        record: PathBuf,
        #[arg(long, default_value = io::LOCAL_SIC)]
        povm: String,
        /// Reference state for error tracking.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Start from this state instead of the configured initialization.
        #[arg(long)]
        init_state: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "pgd")]
        algorithm: AlgorithmArg,
        /// Uniform rank cap used by the step-size presets (ignored with --config).
        #[arg(long)]
        rbar: Option<usize>,
        #[arg(long, value_enum, default_value = "spectral")]
        init: InitArg,
        /// Use the fixed-step preset instead of the decaying one.
        #[arg(long)]
        fixed_step: bool,
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Check a POVM file (or the bundled qubit SIC) for validity and the SIC conditions.
    CheckPovm {
        /// `local-sic` or a JSON file.
        #[arg(default_value = io::LOCAL_SIC)]
        povm: String,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Measure the design defect of a vector set at moment order `s`.
    CheckDesign {
        /// `local-sic` or a JSON file `{vectors: [[[re, im], ...], ...]}`.
        vectors: String,
        #[arg(long, short = 's')]
        s: usize,
    },
    /// `gamma = K max_k p_k` of a state under a product POVM.
    Gamma {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value = io::LOCAL_SIC)]
        povm: String,
        #[arg(long, value_enum, default_value = "beam")]
        method: GammaArg,
        #[arg(long, default_value_t = GammaMethod::DEFAULT_BEAM_WIDTH)]
        width: usize,
    },
    /// Run a sweep described by a JSON experiment spec.
    Experiment {
        /// Experiment spec; defaults to `--config`.
        spec: Option<PathBuf>,
        /// Skip SVG plots.
        #[arg(long)]
        no_plots: bool,
    },
}

/// Parse arguments and run. Parse failures other than `--help`/`--version`
/// are input errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let seed = g.seed.unwrap_or(0);
    match &cli.command {
        Command::Generate { kind, n, kappa, k_l, bits } => {
            cmd_generate(&out, g.config.as_deref(), g.seed, *kind, *n, *kappa, *k_l, bits.as_deref())
        }
        Command::Measure { state, povm, shots, sampler } => cmd_measure(&out, state, povm, *shots, seed, *sampler),
        Command::Estimate { record, povm, truth, init_state, algorithm, rbar, init, fixed_step, max_iters } => {
            let opts = EstimateOpts {
                config: g.config.as_deref(),
                povm,
                truth: truth.as_deref(),
                init_state: init_state.as_deref(),
                algorithm: *algorithm,
                rbar: *rbar,
                init: *init,
                fixed_step: *fixed_step,
                max_iters: *max_iters,
                backend: g.backend,
                seed,
            };
            cmd_estimate(&out, record, &opts).map(|_| ())
        }
        Command::CheckPovm { povm, tol } => cmd_check_povm(&out, povm, *tol).map(|_| ()),
        Command::CheckDesign { vectors, s } => cmd_check_design(&out, vectors, *s),
        Command::Gamma { state, povm, method, width } => cmd_gamma(&out, state, povm, *method, *width),
        Command::Experiment { spec, no_plots } => {
            let path = spec
                .as_deref()
                .or(g.config.as_deref())
                .ok_or_else(|| CliError::Input("experiment needs a spec file (positional or --config)".into()))?;
            let opts = experiment::RunOptions {
                out: g.out.clone(),
                threads: g.threads,
                backend: g.backend.map(Backend::from),
                base_seed: g.seed,
                plots: !no_plots,
            };
            experiment::run_experiment(path, &opts).map(|_| ())
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_generate(
    out: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    kind: StateKind,
    n: Option<usize>,
    kappa: Option<usize>,
    k_l: Option<usize>,
    bits: Option<&str>,
) -> Result<()> {
    let need_n = || n.ok_or_else(|| CliError::Input("--n is required".into()));
    let (state, source) = match kind {
        StateKind::Mpdo => {
            let mut cfg = match config {
                Some(p) => read_json::<MpdoConfig>(p)?,
                None => MpdoConfig::new(need_n()?, 1, 0),
            };
            if let Some(n) = n {
                cfg.n = n;
            }
            if let Some(k) = kappa {
                cfg.kappa = k;
            }
            if let Some(k) = k_l {
                cfg.k_l = k;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            (random_mpdo(&cfg)?, json!({"kind": "mpdo", "config": cfg}))
        }
        StateKind::MaximallyMixed => {
            let n = need_n()?;
            (maximally_mixed(n, 2)?, json!({"kind": "maximally_mixed", "n": n}))
        }
        StateKind::Product => {
            let bits = bits.ok_or_else(|| CliError::Input("--bits is required for a product state".into()))?;
            (pure_product(bits)?, json!({"kind": "product", "bits": bits}))
        }
        StateKind::Ghz => {
            let n = need_n()?;
            (ghz_density(n)?, json!({"kind": "ghz", "n": n}))
        }
    };
    let used_seed = source["config"]["seed"].as_u64().unwrap_or(0);
    let file = StateFile { provenance: Provenance::new("generate", &source, used_seed), source, state };
    let path = out.join("state.json");
    write_json(&path, &file)?;
    println!("wrote {} (n = {}, ranks {:?})", path.display(), file.state.n(), file.state.ranks());
    Ok(())
}

pub fn cmd_measure(out: &Path, state: &Path, povm: &str, shots: u64, seed: u64, sampler: SamplerArg) -> Result<()> {
    let (rho, state_hash) = load_state(state)?;
    let (povm, povm_id) = PovmSource::parse(povm).load(rho.n())?;
    let record = match sampler {
        SamplerArg::Sequential => sample_sequential(&povm, &rho, shots, seed)?,
        SamplerArg::Enumerate => sample_enumerate_tt(&povm, &rho, shots, seed)?,
    };
    let spec = json!({
        "state": state_hash,
        "povm": povm_id,
        "shots": shots,
        "seed": seed,
        "sampler": format!("{:?}", sampler).to_lowercase(),
    });
    let file = RecordFile { provenance: Provenance::new("measure", &spec, seed), state_hash, record };
    let path = out.join("record.json");
    write_json(&path, &file)?;
    println!("wrote {} ({} shots, {} distinct outcomes)", path.display(), shots, file.record.num_nonzero());
    Ok(())
}

pub struct EstimateOpts<'a> {
    pub config: Option<&'a Path>,
    pub povm: &'a str,
    pub truth: Option<&'a Path>,
    pub init_state: Option<&'a Path>,
    pub algorithm: AlgorithmArg,
    pub rbar: Option<usize>,
    pub init: InitArg,
    pub fixed_step: bool,
    pub max_iters: Option<usize>,
    pub backend: Option<BackendArg>,
    pub seed: u64,
}

#[derive(Serialize)]
struct EstimateFile<'a> {
    provenance: Provenance,
    algorithm: &'static str,
    config: &'a EstimatorConfig,
    iterations_run: usize,
    converged_reason: mpotomo::estimator::ConvergedReason,
    final_loss: f64,
    init_error: Option<f64>,
    final_error: Option<f64>,
    epoch_size: Option<usize>,
    batch_size: Option<usize>,
    state: &'a TtTensor,
}

/// Trace CSV: provenance header, then `iter,loss,error,step,wall_ms`.
pub fn trace_csv(provenance: &Provenance, rows: &[TraceRow]) -> String {
    let mut s = provenance.csv_header();
    s.push_str("iter,loss,error,step,wall_ms\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.iter,
            fmt_f64(r.loss),
            fmt_opt(r.error),
            fmt_f64(r.step),
            fmt_f64(r.wall_ms)
        ));
    }
    s
}

pub fn cmd_estimate(out: &Path, record_path: &Path, o: &EstimateOpts) -> Result<Estimate> {
    let (record, record_hash) = load_record(record_path)?;
    let n = record.outcome_len();
    let (povm, povm_id) = PovmSource::parse(o.povm).load(n)?;
    let truth = o.truth.map(load_state).transpose()?;
    let init_state = o.init_state.map(load_state).transpose()?;
    let init = match (&init_state, o.init) {
        (Some(_), _) => Init::Provided,
        (None, InitArg::Spectral) => Init::Spectral,
        (None, InitArg::Random) => Init::Random { seed: o.seed },
    };
    let mut config = match o.config {
        Some(p) => read_json::<EstimatorConfig>(p)?,
        None => {
            let rbar = o.rbar.ok_or_else(|| CliError::Input("--rbar or --config is required".into()))?;
            // The presets are defined per initialization; a provided start uses the spectral one.
            let preset_init = if init == Init::Provided { Init::Spectral } else { init };
            let cfg = match o.algorithm {
                AlgorithmArg::Pgd => EstimatorConfig::preset(n, povm.d(), rbar, preset_init, o.fixed_step)?,
                AlgorithmArg::Psgd => EstimatorConfig::preset_psgd(n, povm.d(), rbar, preset_init)?,
            };
            cfg.with_init(init)
        }
    };
    if o.config.is_none() {
        config.seed = o.seed;
    }
    if init_state.is_some() {
        config.init = Init::Provided;
    }
    if let Some(it) = o.max_iters {
        config.max_iters = Some(it);
    }
    if let Some(b) = o.backend {
        config.backend = b.into();
    }
    let truth_state = truth.as_ref().map(|(t, _)| t);
    let est = match (o.algorithm, &init_state) {
        (AlgorithmArg::Pgd, None) => pgd(&record, &povm, &config, truth_state)?,
        (AlgorithmArg::Pgd, Some((s, _))) => pgd_with_init(&record, &povm, &config, s, truth_state)?,
        (AlgorithmArg::Psgd, None) => psgd(&record, &povm, &config, truth_state)?,
        (AlgorithmArg::Psgd, Some((s, _))) => psgd_with_init(&record, &povm, &config, s, truth_state)?,
    };
    let algorithm = match o.algorithm {
        AlgorithmArg::Pgd => "pgd",
        AlgorithmArg::Psgd => "psgd",
    };
    let spec = json!({
        "record": record_hash,
        "povm": povm_id,
        "truth": truth.as_ref().map(|(_, h)| h),
        "init_state": init_state.as_ref().map(|(_, h)| h),
        "algorithm": algorithm,
        "config": config,
    });
    let provenance = Provenance::new("estimate", &spec, config.seed);
    let file = EstimateFile {
        provenance: provenance.clone(),
        algorithm,
        config: &config,
        iterations_run: est.iterations_run,
        converged_reason: est.converged_reason,
        final_loss: est.final_loss,
        init_error: est.init_error,
        final_error: est.final_error,
        epoch_size: est.epoch_size,
        batch_size: est.batch_size,
        state: &est.state,
    };
    write_json(&out.join("estimate.json"), &file)?;
    write_text(&out.join("trace.csv"), &trace_csv(&provenance, &est.trace_log))?;
    println!(
        "{} iterations ({:?}), final loss {:.6e}{}",
        est.iterations_run,
        est.converged_reason,
        est.final_loss,
        est.final_error.map(|e| format!(", final error {:.6e}", e)).unwrap_or_default()
    );
    Ok(est)
}

#[derive(Clone, Debug, Serialize)]
pub struct SiteReport {
    pub site: usize,
    pub dim: usize,
    pub count: usize,
    /// PSD elements summing to the identity.
    pub is_povm: bool,
    pub sic: SicReport,
    pub is_sic: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PovmReport {
    pub provenance: Provenance,
    pub source: String,
    pub tolerance: f64,
    pub sites: Vec<SiteReport>,
    pub max_sic_deviation: f64,
    /// Every site is a valid POVM.
    pub pass: bool,
    pub is_sic: bool,
}

/// Local POVMs described by a check-povm input, without validation.
fn povm_sites(source: &str) -> Result<(Vec<DensePovm>, String)> {
    if source == io::LOCAL_SIC {
        return Ok((vec![DensePovm::from(sic_qubit())], io::LOCAL_SIC.into()));
    }
    let path = Path::new(source);
    let bytes = read_bytes(path)?;
    let unchecked = |d: usize, elements: Vec<mpotomo::povm::JsonMatrix>| DensePovm::try_from(&DensePovmJson { d, elements });
    let sites = match serde_json::from_slice::<ProductPovmJson>(&bytes) {
        Ok(ProductPovmJson::Sites { sites }) => {
            sites.into_iter().map(|s| unchecked(s.d, s.elements)).collect::<mpotomo::Result<Vec<_>>>()?
        }
        Ok(ProductPovmJson::Shared { local, .. }) => vec![unchecked(local.d, local.elements)?],
        Err(_) => {
            let j: LocalPovmJson = serde_json::from_slice(&bytes)
                .map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
            vec![unchecked(j.d, j.elements)?]
        }
    };
    Ok((sites, format!("sha256:{}", sha256_hex(&bytes))))
}

pub fn cmd_check_povm(out: &Path, source: &str, tol: f64) -> Result<PovmReport> {
    let (sites, id) = povm_sites(source)?;
    let sites: Vec<SiteReport> = sites
        .iter()
        .enumerate()
        .map(|(site, p)| {
            let sic = check_sic(p);
            SiteReport {
                site,
                dim: p.dim(),
                count: p.len(),
                is_povm: p.is_valid(),
                is_sic: sic.passes(tol),
                sic,
            }
        })
        .collect();
    let spec = json!({"povm": id, "tol": tol});
    let report = PovmReport {
        provenance: Provenance::new("check-povm", &spec, 0),
        source: source.into(),
        tolerance: tol,
        max_sic_deviation: sites.iter().map(|s| s.sic.max_dev()).fold(0.0, f64::max),
        pass: sites.iter().all(|s| s.is_povm),
        is_sic: sites.iter().all(|s| s.is_sic),
        sites,
    };
    write_json(&out.join("povm_report.json"), &report)?;
    println!(
        "{}: POVM {}, SIC {} (max deviation {:.3e})",
        source,
        if report.pass { "pass" } else { "FAIL" },
        if report.is_sic { "pass" } else { "fail" },
        report.max_sic_deviation
    );
    Ok(report)
}

pub fn cmd_check_design(out: &Path, source: &str, s: usize) -> Result<()> {
    let (vectors, id) = if source == io::LOCAL_SIC {
        let vs = sic_qubit().rank_one_vectors().ok_or_else(|| CliError::Input("SIC elements are not rank one".into()))?;
        (vs, io::LOCAL_SIC.to_string())
    } else {
        let path = Path::new(source);
        let j: VectorSetJson = read_json(path)?;
        (j.to_vectors(), format!("sha256:{}", sha256_hex(&read_bytes(path)?)))
    };
    let report = check_t_design(&vectors, s)?;
    let spec = json!({"vectors": id, "s": s});
    let value = json!({
        "provenance": Provenance::new("check-design", &spec, 0),
        "vectors": vectors.len(),
        "report": report,
    });
    write_json(&out.join("design_report.json"), &value)?;
    println!(
        "{} vectors, s = {}: delta_lower {:.3e}, delta_upper {:.3e}",
        vectors.len(),
        s,
        report.delta_lower,
        report.delta_upper
    );
    Ok(())
}

pub fn cmd_gamma(out: &Path, state: &Path, povm: &str, method: GammaArg, width: usize) -> Result<()> {
    let (rho, state_hash) = load_state(state)?;
    let (povm, povm_id) = PovmSource::parse(povm).load(rho.n())?;
    let method = match method {
        GammaArg::Exhaustive => GammaMethod::Exhaustive,
        GammaArg::Beam => GammaMethod::Beam { width },
    };
    let report = gamma(&povm, &rho, method)?;
    let spec = json!({"state": state_hash, "povm": povm_id, "method": method});
    let value = json!({
        "provenance": Provenance::new("gamma", &spec, 0),
        "method": method,
        "report": report,
    });
    write_json(&out.join("gamma_report.json"), &value)?;
    println!(
        "gamma {} {:.6} at outcome {:?}",
        if report.exact { "=" } else { ">=" },
        report.gamma,
        report.argmax_outcome
    );
    Ok(())
}
