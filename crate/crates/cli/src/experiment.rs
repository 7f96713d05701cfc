//! Parameter sweeps: one estimation per (n, M, rbar, init, algorithm, seed) cell.
//!
//! A truth is drawn once per (n, rbar, seed) and its record once per
//! (n, rbar, seed, M), so init modes and algorithms see identical data and the
//! M-sweep reuses one ground truth per seed. All randomness derives from
//! `sha256(base_seed ":" key)`. Rows are appended to `results.csv` as cells
//! finish; a re-run with the same spec skips completed cells.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::info;
use mpotomo::estimator::{pgd_data, psgd_data, Backend, EmpiricalData, Estimate, EstimatorConfig, Init};
use mpotomo::povm::{gamma, GammaMethod, ProductPovm};
use mpotomo::sampler::{sample_sequential, OutcomeRecord};
use mpotomo::statesim::{random_mpdo, MpdoConfig};
use mpotomo::tt::TtTensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{derive_seed, ensure_dir, fmt_f64, fmt_opt, read_bytes, write_text, PovmSource, Provenance};
use crate::{plot, trace_csv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Random,
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pgd,
    Psgd,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `mu_tau = mu0 2^n lambda^tau` with the decaying presets.
    #[default]
    Decaying,
    /// Constant step presets (`lambda = 1`).
    Fixed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSetting {
    #[default]
    None,
    Beam,
    Exhaustive,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(x) => vec![x.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Estimator settings applied on top of the step-size presets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale_2n: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau_window: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tt_round_tol: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut EstimatorConfig) {
        if let Some(v) = self.max_iters {
            cfg.max_iters = Some(v);
        }
        if let Some(v) = self.mu0 {
            cfg.mu0 = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.scale_2n {
            cfg.scale_2n = v;
        }
        if let Some(v) = self.backend {
            cfg.backend = v;
        }
        if let Some(v) = self.epoch_size {
            cfg.epoch_size = Some(v);
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.plateau_tol {
            cfg.plateau_tol = v;
        }
        if let Some(v) = self.plateau_window {
            cfg.plateau_window = v;
        }
        if let Some(v) = self.tt_round_tol {
            cfg.tt_round_tol = v;
        }
    }
}

fn default_povm() -> String {
    crate::io::LOCAL_SIC.into()
}

fn default_algorithm() -> OneOrMany<Algorithm> {
    OneOrMany::One(Algorithm::Pgd)
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub n: Vec<usize>,
    /// Shot counts `M`.
    pub m: Vec<u64>,
    pub rbar: Vec<usize>,
    pub init: Vec<InitMode>,
    #[serde(default = "default_algorithm")]
    pub algorithm: OneOrMany<Algorithm>,
    /// Seeds per cell.
    pub seeds: usize,
    /// `local-sic` or a POVM file.
    #[serde(default = "default_povm")]
    pub povm: String,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub overrides: Overrides,
    /// Truth bond parameter; default `ceil(sqrt(rbar))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    #[serde(default)]
    pub gamma: GammaSetting,
    #[serde(default)]
    pub base_seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Write per-cell trace CSVs.
    #[serde(default = "default_true")]
    pub traces: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("n", self.n.is_empty()),
            ("m", self.m.is_empty()),
            ("rbar", self.rbar.is_empty()),
            ("init", self.init.is_empty()),
            ("algorithm", self.algorithm.to_vec().is_empty()),
        ];
        if let Some((axis, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(CliError::Input(format!("experiment axis '{}' is empty", axis)));
        }
        if self.seeds == 0 {
            return Err(CliError::Input("seeds must be >= 1".into()));
        }
        if self.n.contains(&0) || self.m.contains(&0) || self.rbar.contains(&0) || self.kappa == Some(0) {
            return Err(CliError::Input("n, m, rbar and kappa must be positive".into()));
        }
        Ok(())
    }

    /// Cells in sweep order: n, M, rbar, init, algorithm, seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n in &self.n {
            for &m in &self.m {
                for &rbar in &self.rbar {
                    for &init in &self.init {
                        for algorithm in self.algorithm.to_vec() {
                            for seed in 0..self.seeds {
                                cells.push(Cell { n, m, rbar, init, algorithm, seed });
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub n: usize,
    pub m: u64,
    pub rbar: usize,
    pub init: InitMode,
    pub algorithm: Algorithm,
    pub seed: usize,
}

fn init_label(i: InitMode) -> &'static str {
    match i {
        InitMode::Random => "random",
        InitMode::Spectral => "spectral",
    }
}

fn algorithm_label(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Pgd => "pgd",
        Algorithm::Psgd => "psgd",
    }
}

impl Cell {
    pub fn key(&self) -> String {
        format!(
            "n{}_m{}_r{}_{}_{}_s{}",
            self.n,
            self.m,
            self.rbar,
            init_label(self.init),
            algorithm_label(self.algorithm),
            self.seed
        )
    }

    fn truth_key(&self) -> String {
        format!("truth/n{}_r{}_s{}", self.n, self.rbar, self.seed)
    }

    fn record_key(&self) -> String {
        format!("record/n{}_r{}_s{}_m{}", self.n, self.rbar, self.seed, self.m)
    }
}

/// One line of `results.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub key: String,
    pub n: usize,
    pub m: u64,
    pub rbar: usize,
    pub init: String,
    pub algorithm: String,
    pub seed: usize,
    pub init_error: f64,
    pub final_error: f64,
    pub final_loss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: f64,
    pub gamma: Option<f64>,
}

const RESULT_HEADER: &str =
    "key,n,m,rbar,init,algorithm,seed,init_error,final_error,final_loss,iterations,converged,wall_ms,gamma";

impl ResultRow {
    fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            self.key,
            self.n,
            self.m,
            self.rbar,
            self.init,
            self.algorithm,
            self.seed,
            fmt_f64(self.init_error),
            fmt_f64(self.final_error),
            fmt_f64(self.final_loss),
            self.iterations,
            self.converged,
            fmt_f64(self.wall_ms),
            fmt_opt(self.gamma)
        )
    }
}

/// Command-line settings layered over the spec.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub backend: Option<Backend>,
    pub base_seed: Option<u64>,
    pub plots: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub out: PathBuf,
    pub rows: Vec<ResultRow>,
    /// Cells computed in this invocation (the rest were resumed).
    pub computed: usize,
}

pub fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let bytes = read_bytes(path)?;
    let spec: ExperimentSpec = serde_json::from_slice(&bytes)
        .map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
    spec.validate()?;
    Ok(spec)
}

pub fn run_experiment(path: &Path, opts: &RunOptions) -> Result<ExperimentOutcome> {
    let mut spec = load_spec(path)?;
    if let Some(b) = opts.backend {
        spec.overrides.backend = Some(b);
    }
    if let Some(s) = opts.base_seed {
        spec.base_seed = s;
    }
    let out = opts.out.clone().or_else(|| spec.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    // The output location does not change any result.
    let mut hashed = spec.clone();
    hashed.out = None;
    let spec_value = serde_json::to_value(&hashed).map_err(|source| CliError::Json { path: path.display().to_string(), source })?;
    let provenance = Provenance::new("experiment", &spec_value, spec.base_seed);
    run_spec(&spec, &provenance, &out, opts)
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::Input("--threads must be >= 1".into()));
        }
        b = b.num_threads(t);
    }
    b.build().map_err(|e| CliError::Input(format!("thread pool: {}", e)))
}

/// Rows already present in `results.csv`; errors if it came from another spec.
fn resume(path: &Path, provenance: &Provenance) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let expected = format!("# spec_hash: {}", provenance.spec_hash);
    let mut found = false;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if !line.starts_with('#') {
            break;
        }
        if line.starts_with("# spec_hash:") {
            found = line == expected;
        }
    }
    if !found {
        return Err(CliError::Input(format!(
            "{} was written by a different experiment spec; choose another output directory",
            path.display()
        )));
    }
    read_rows(path)
}

pub fn read_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let mut rows = Vec::new();
    for r in reader.deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}

struct Appender {
    file: File,
}

impl Appender {
    fn open(path: &Path, provenance: &Provenance, fresh: bool) -> Result<Self> {
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| CliError::io(path, e))?;
        if fresh {
            write!(file, "{}{}\n", provenance.csv_header(), RESULT_HEADER).map_err(|e| CliError::io(path, e))?;
        }
        Ok(Appender { file })
    }

    fn push(&mut self, row: &ResultRow) -> std::io::Result<()> {
        self.file.write_all(row.to_line().as_bytes())?;
        self.file.flush()
    }
}

fn truth_for(spec: &ExperimentSpec, cell: &Cell) -> Result<TtTensor> {
    let kappa = spec.kappa.unwrap_or_else(|| (cell.rbar as f64).sqrt().ceil() as usize);
    let mut cfg = MpdoConfig::new(cell.n, kappa, derive_seed(spec.base_seed, &cell.truth_key()));
    cfg.d = 2;
    Ok(random_mpdo(&cfg)?)
}

fn config_for(spec: &ExperimentSpec, cell: &Cell, d: usize) -> Result<EstimatorConfig> {
    let init = match cell.init {
        InitMode::Spectral => Init::Spectral,
        InitMode::Random => Init::Random { seed: derive_seed(spec.base_seed, &format!("init/{}", cell.key())) },
    };
    let mut cfg = match cell.algorithm {
        Algorithm::Pgd => EstimatorConfig::preset(cell.n, d, cell.rbar, init, spec.schedule == Schedule::Fixed)?,
        Algorithm::Psgd => EstimatorConfig::preset_psgd(cell.n, d, cell.rbar, init)?,
    };
    cfg.seed = derive_seed(spec.base_seed, &format!("psgd/{}", cell.key()));
    spec.overrides.apply(&mut cfg);
    Ok(cfg)
}

struct Shared {
    truth: TtTensor,
    gamma: Option<f64>,
}

fn run_cell(
    spec: &ExperimentSpec,
    cell: &Cell,
    povm: &ProductPovm,
    shared: &Shared,
    data: &EmpiricalData,
) -> Result<(ResultRow, Estimate)> {
    let cfg = config_for(spec, cell, povm.d())?;
    let start = Instant::now();
    let est = match cell.algorithm {
        Algorithm::Pgd => pgd_data(data, &cfg, None, Some(&shared.truth))?,
        Algorithm::Psgd => psgd_data(data, &cfg, None, Some(&shared.truth))?,
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let row = ResultRow {
        key: cell.key(),
        n: cell.n,
        m: cell.m,
        rbar: cell.rbar,
        init: init_label(cell.init).into(),
        algorithm: algorithm_label(cell.algorithm).into(),
        seed: cell.seed,
        init_error: est.init_error.unwrap_or(f64::NAN),
        final_error: est.final_error.unwrap_or(f64::NAN),
        final_loss: est.final_loss,
        iterations: est.iterations_run,
        converged: est.converged(),
        wall_ms,
        gamma: shared.gamma,
    };
    Ok((row, est))
}

fn run_spec(spec: &ExperimentSpec, provenance: &Provenance, out: &Path, opts: &RunOptions) -> Result<ExperimentOutcome> {
    ensure_dir(out)?;
    let results_path = out.join("results.csv");
    let fresh = !results_path.exists();
    let previous = resume(&results_path, provenance)?;
    let done: HashSet<String> = previous.iter().map(|r| r.key.clone()).collect();
    let cells = spec.cells();
    let pending: Vec<Cell> = cells.iter().filter(|c| !done.contains(&c.key())).copied().collect();
    info!("{} cells, {} already complete", cells.len(), cells.len() - pending.len());

    let povm_source = PovmSource::parse(&spec.povm);
    let mut povms = HashMap::new();
    for &n in &spec.n {
        povms.insert(n, povm_source.load(n)?.0);
    }
    let appender = Mutex::new(Appender::open(&results_path, provenance, fresh)?);
    let traces_dir = out.join("traces");
    if spec.traces {
        ensure_dir(&traces_dir)?;
    }

    // Group pending cells by record so truth, samples and the empirical
    // operator are built once per group.
    let mut groups: BTreeMap<(usize, usize, usize, u64), Vec<Cell>> = BTreeMap::new();
    for c in &pending {
        groups.entry((c.n, c.rbar, c.seed, c.m)).or_default().push(*c);
    }
    let groups: Vec<Vec<Cell>> = groups.into_values().collect();
    let pool = pool(opts.threads)?;
    let new_rows: Mutex<Vec<ResultRow>> = Mutex::new(Vec::new());
    pool.install(|| {
        groups.par_iter().try_for_each(|group| -> Result<()> {
            let first = group[0];
            let povm = &povms[&first.n];
            let truth = truth_for(spec, &first)?;
            let gamma = match spec.gamma {
                GammaSetting::None => None,
                GammaSetting::Beam => {
                    Some(gamma(povm, &truth, GammaMethod::Beam { width: GammaMethod::DEFAULT_BEAM_WIDTH })?.gamma)
                }
                GammaSetting::Exhaustive => Some(gamma(povm, &truth, GammaMethod::Exhaustive)?.gamma),
            };
            let record: OutcomeRecord =
                sample_sequential(povm, &truth, first.m, derive_seed(spec.base_seed, &first.record_key()))?;
            let shared = Shared { truth, gamma };
            let data = EmpiricalData::new(&record, povm)?;
            group.par_iter().try_for_each(|cell| -> Result<()> {
                let (row, est) = run_cell(spec, cell, povm, &shared, &data)?;
                if spec.traces {
                    let p = Provenance { seed: cell.seed as u64, ..provenance.clone() };
                    write_text(&traces_dir.join(format!("{}.csv", row.key)), &trace_csv(&p, &est.trace_log))?;
                }
                appender
                    .lock()
                    .expect("appender lock")
                    .push(&row)
                    .map_err(|e| CliError::io(&results_path, e))?;
                info!("{}: error {:.4e}, {} iterations", row.key, row.final_error, row.iterations);
                new_rows.lock().expect("rows lock").push(row);
                Ok(())
            })
        })
    })?;
    drop(appender);
    let computed = new_rows.lock().expect("rows lock").len();

    // Rewrite in sweep order, then re-read so the summary uses the stored precision.
    let order: HashMap<String, usize> = cells.iter().enumerate().map(|(i, c)| (c.key(), i)).collect();
    let mut all = previous;
    all.extend(new_rows.into_inner().expect("rows lock"));
    all.sort_by_key(|r| order.get(&r.key).copied().unwrap_or(usize::MAX));
    let mut text = provenance.csv_header();
    text.push_str(RESULT_HEADER);
    text.push('\n');
    for r in &all {
        text.push_str(&r.to_line());
    }
    write_text(&results_path, &text)?;
    let rows = read_rows(&results_path)?;
    write_summary(&out.join("summary.csv"), provenance, &rows)?;
    if opts.plots {
        plot::render_all(out, &rows, spec.traces.then_some(traces_dir.as_path()))?;
    }
    println!("{} rows in {} ({} computed)", rows.len(), results_path.display(), computed);
    Ok(ExperimentOutcome { out: out.to_path_buf(), rows, computed })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let k = values.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

/// Aggregate over seeds, keyed by everything but the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub m: u64,
    pub rbar: usize,
    pub init: String,
    pub algorithm: String,
    pub seeds: usize,
    pub median_init_error: f64,
    pub median_final_error: f64,
    pub median_final_loss: f64,
    pub median_iterations: f64,
    pub median_gamma: Option<f64>,
    /// Seeds that hit the iteration cap before the loss plateaued.
    pub non_converged: usize,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(usize, u64, usize, String, String)> = Vec::new();
    let mut groups: HashMap<(usize, u64, usize, String, String), Vec<&ResultRow>> = HashMap::new();
    for r in rows {
        let k = (r.n, r.m, r.rbar, r.init.clone(), r.algorithm.clone());
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = &groups[&k];
            let med = |f: &dyn Fn(&ResultRow) -> f64| median(&mut g.iter().map(|r| f(r)).collect::<Vec<_>>());
            let gammas: Vec<f64> = g.iter().filter_map(|r| r.gamma).collect();
            SummaryRow {
                n: k.0,
                m: k.1,
                rbar: k.2,
                init: k.3.clone(),
                algorithm: k.4.clone(),
                seeds: g.len(),
                median_init_error: med(&|r| r.init_error),
                median_final_error: med(&|r| r.final_error),
                median_final_loss: med(&|r| r.final_loss),
                median_iterations: med(&|r| r.iterations as f64),
                median_gamma: (!gammas.is_empty()).then(|| median(&mut gammas.clone())),
                non_converged: g.iter().filter(|r| !r.converged).count(),
            }
        })
        .collect()
}

fn write_summary(path: &Path, provenance: &Provenance, rows: &[ResultRow]) -> Result<()> {
    let mut text = provenance.csv_header();
    text.push_str(
        "n,m,rbar,init,algorithm,seeds,median_init_error,median_final_error,median_final_loss,median_iterations,median_gamma,non_converged\n",
    );
    for s in summarize(rows) {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            s.n,
            s.m,
            s.rbar,
            s.init,
            s.algorithm,
            s.seeds,
            fmt_f64(s.median_init_error),
            fmt_f64(s.median_final_error),
            fmt_f64(s.median_final_loss),
            fmt_f64(s.median_iterations),
            fmt_opt(s.median_gamma),
            s.non_converged
        ));
    }
    write_text(path, &text)
}
