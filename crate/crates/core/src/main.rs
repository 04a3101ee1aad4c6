use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use superradiant::config::Config;
use superradiant::harness::{self, Command, RunOptions};

#[derive(Parser)]
#[command(
    version,
    about = "Partially driven superradiant laser: spectra, steady-state maps, transients, thresholds"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Stationary spectrum versus driven fraction
    SpectrumSweep(RunArgs),
    /// Power, linewidth and frequency shift over (gamma_plus, p_d)
    SteadyMap(RunArgs),
    /// Frequency-shift relaxation after decay and dephasing are switched on
    Transient(RunArgs),
    /// Table of lasing thresholds
    Thresholds(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV datasets and manifest.json
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores)
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::SpectrumSweep(a) => (Command::SpectrumSweep, a),
        Cmd::SteadyMap(a) => (Command::SteadyMap, a),
        Cmd::Transient(a) => (Command::Transient, a),
        Cmd::Thresholds(a) => (Command::Thresholds, a),
    };
    let config = match &args.config {
        Some(path) => Config::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => Config::default(),
    };
    let opts = RunOptions {
        out_dir: args.out,
        seed: args.seed,
        workers: args.workers,
        config_path: args.config,
    };
    let manifest = harness::run(command, &config, &opts).with_context(|| format!("{} failed", command.name()))?;
    for f in &manifest.outputs {
        println!("{}  {}", f.sha256, opts.out_dir.join(&f.path).display());
    }
    if !manifest.failures.is_empty() {
        log::warn!("{} point(s) failed; see manifest.json", manifest.failures.len());
    }
    Ok(())
}
