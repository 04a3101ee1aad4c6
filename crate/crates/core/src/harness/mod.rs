//! Dataset generation: parameter sweeps, steady-state maps, transients and
//! threshold tables, each written as CSV files plus a run manifest.
//!
//! Every subcommand has a `compute_*` function returning the in-memory
//! result and a `tables` method turning it into datasets; [`run`] ties the
//! two together and writes the manifest. Points are evaluated in parallel
//! and collected in input order, so outputs do not depend on the worker
//! count.

mod output;
mod steady_map;
mod sweep;
mod thresholds;
mod transient;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::cumulant::{self, CumulantError};
use crate::model::{CumulantState, LorentzianFit, ParamError, SystemParams};
use crate::spectrum::{self, RegressionSystem, SpectrumError};

pub use output::{
    format_f64, read_table, sha256_file, write_tables, FileEntry, LoadedTable, Manifest, PointFailure, Table, Value,
    MANIFEST_SCHEMA, SOFTWARE,
};
pub use steady_map::{compute_steady_map, HatchCriterion, MapPoint, SteadyMap};
pub use sweep::{compute_spectrum_sweep, SpectrumSweep, SweepPoint};
pub use thresholds::{compute_threshold_report, ThresholdReport, ThresholdRow};
pub use transient::{compute_transient, fit_exponential, ExpFit, NTrack, TrackSample, TransientResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("dataset schema: {0}")]
    Schema(String),
    #[error("{0}")]
    Run(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SpectrumSweep,
    SteadyMap,
    Transient,
    Thresholds,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SpectrumSweep => "spectrum-sweep",
            Command::SteadyMap => "steady-map",
            Command::Transient => "transient",
            Command::Thresholds => "thresholds",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed: u64,
    /// `0` uses all available cores.
    pub workers: usize,
    /// Recorded in the manifest as the run input.
    pub config_path: Option<PathBuf>,
}

/// Evaluates `f` on every item with `workers` threads; results keep the
/// order of `items`.
pub fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, HarnessError>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

/// Steady state and spectral characterization of one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyAnalysis {
    pub state: CumulantState,
    pub system: RegressionSystem,
    /// Slowest eigenvalue of the regression matrix: `(-Re, |Im|)`.
    pub delta_nu_eig: f64,
    pub delta_eig: f64,
    /// `|omega|` of the spectral maximum.
    pub peak_omega: f64,
    pub fit: Result<LorentzianFit, SpectrumError>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PointError {
    #[error("steady state: {0}")]
    Steady(#[from] CumulantError),
    #[error("spectrum: {0}")]
    Spectrum(#[from] SpectrumError),
}

impl PointError {
    pub fn stage(&self) -> &'static str {
        match self {
            PointError::Steady(_) => "steady-state",
            PointError::Spectrum(_) => "spectrum",
        }
    }
}

/// Cumulant steady state from the ground state, eigenvalue linewidth,
/// spectral peak and double-Lorentzian fit (initialized from the
/// eigenvalues, on a grid focused on the lines).
pub fn analyze_steady(p: &SystemParams) -> Result<SteadyAnalysis, PointError> {
    let state = cumulant::cumulant_steady_state(p, &cumulant::default_options(p))?;
    analyze_state(p, state)
}

pub fn analyze_state(p: &SystemParams, state: CumulantState) -> Result<SteadyAnalysis, PointError> {
    let system = spectrum::regression_matrix(p, state.s_z_d, state.s_z_ud);
    system.check_stable()?;
    let c = spectrum::correlation_vector(&state);
    let (delta_nu_eig, delta_eig) = spectrum::linewidth_from_eigenvalues(&system);
    let peak_omega = spectrum::peak_frequency(&system, &c, &spectrum::default_grid(p, delta_nu_eig, delta_eig))?;
    let fit = spectrum::steady_state_spectrum(&system, &c, &spectrum::fit_grid(delta_nu_eig, delta_eig))
        .and_then(|spec| spectrum::fit_double_lorentzian(&spec, Some((delta_nu_eig, delta_eig))));
    Ok(SteadyAnalysis {
        state,
        system,
        delta_nu_eig,
        delta_eig,
        peak_omega,
        fit,
    })
}

/// Derived parameters as manifest/header entries.
pub fn param_echo(p: &SystemParams) -> BTreeMap<String, String> {
    p.echo().into_iter().collect()
}

fn add_param_metadata(table: &mut Table, p: &SystemParams) {
    for (k, v) in p.echo() {
        table.meta(&format!("param.{k}"), v);
    }
}

/// Runs `command` and writes its datasets and `manifest.json` into
/// `opts.out_dir`.
pub fn run(command: Command, config: &Config, opts: &RunOptions) -> Result<Manifest, HarnessError> {
    std::fs::create_dir_all(&opts.out_dir)?;
    let (tables, params, failures, effective) = match command {
        Command::SpectrumSweep => {
            let r = compute_spectrum_sweep(config, opts.workers)?;
            (r.tables(opts.seed), r.base, r.failures(), r.config.clone())
        }
        Command::SteadyMap => {
            let r = compute_steady_map(config, opts.workers)?;
            (r.tables(opts.seed), r.base, r.failures(), r.config.clone())
        }
        Command::Transient => {
            let r = compute_transient(config, opts.seed, opts.workers)?;
            (r.tables(opts.seed), r.base, r.failures(), r.config.clone())
        }
        Command::Thresholds => {
            let r = compute_threshold_report(config, opts.workers)?;
            (r.tables(opts.seed), r.base, r.failures(), r.config.clone())
        }
    };
    for f in &failures {
        log::warn!("{}: {} failed: {}", f.point, f.stage, f.error);
    }
    let outputs = write_tables(&opts.out_dir, &tables)?;
    let inputs = match &opts.config_path {
        Some(path) => vec![input_entry(path)?],
        None => Vec::new(),
    };
    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.to_string(),
        software: SOFTWARE.to_string(),
        command: command.name().to_string(),
        seed: opts.seed,
        config: effective
            .entries()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        params: param_echo(&params),
        inputs,
        outputs,
        failures,
    };
    manifest.write(&opts.out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn input_entry(path: &Path) -> Result<FileEntry, HarnessError> {
    Ok(FileEntry {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
        bytes: std::fs::metadata(path)?.len(),
        rows: None,
        columns: Vec::new(),
    })
}

/// Fills in `key` with `default` unless present, so the effective
/// configuration can be echoed.
fn with_default(config: &mut Config, key: &str, default: impl ToString) {
    if !config.contains(key) {
        config.set(key, default);
    }
}
