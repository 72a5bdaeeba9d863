//! Batch workflows over the `tlsloss-core` analyses.
//!
//! Every command writes its results into the output directory as JSON and CSV
//! files, an SVG plot per figure, and a `manifest.json` with input and output
//! digests. The process exits nonzero when any item failed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

pub use config::ProjectConfig;
pub use output::{Run, RunManifest};

pub const DEFAULT_OUT_DIR: &str = "tlsloss-out";

#[derive(Debug, Parser)]
#[command(name = "tlsloss", version, about = "Two-level-system loss analysis for resonators and qubits")]
pub struct Cli {
    /// TOML or JSON project configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for independent inputs.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit notch-type S21 traces (.csv or .s2p files, or directories of them).
    FitResonator {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Fit the power-dependent TLS loss model to a sweep manifest.
    FitTls { manifest: PathBuf },
    /// Screen and aggregate a qubit table; optionally fit decay traces.
    QubitReport {
        /// Qubit table CSV; the bundled dataset when omitted.
        dataset: Option<PathBuf>,
        /// Decay trace files or directories to fit for T1.
        #[arg(long)]
        decay: Vec<PathBuf>,
    },
    /// Solve the CPW cross-section once or over a thickness sweep.
    Simulate(SimulateArgs),
    /// Write seeded synthetic fixtures with a ground-truth sidecar.
    Synthesize {
        /// TOML or JSON fixture specification.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    None,
    Sm,
    Metal,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SweepKind::None)]
    pub sweep: SweepKind,
    /// Swept thicknesses in nm.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["start", "stop", "points"])]
    pub values: Vec<f64>,
    /// First swept thickness, nm.
    #[arg(long, requires_all = ["stop", "points"])]
    pub start: Option<f64>,
    /// Last swept thickness, nm.
    #[arg(long)]
    pub stop: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

/// Resolved settings shared by every command.
pub struct Context {
    pub config: ProjectConfig,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut config = ProjectConfig::resolve(cli.config.as_deref(), std::env::vars())?;
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        let out_dir = cli
            .out
            .clone()
            .or_else(|| config.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        if cli.jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        Ok(Self {
            config,
            out_dir,
            jobs: cli.jobs,
        })
    }

    pub fn run(&self, command: &str) -> Run {
        Run::new(command, &self.out_dir, &self.config)
    }

    /// Maps `f` over `items` on `jobs` threads, keeping input order.
    pub fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.jobs).build()?;
        Ok(pool.install(|| items.par_iter().map(&f).collect()))
    }
}

/// Outcome of one command: the manifest and the per-item error count.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub errors: usize,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::FitResonator { inputs } => commands::fit_resonator::run(&ctx, inputs),
        Command::FitTls { manifest } => commands::fit_tls::run(&ctx, manifest),
        Command::QubitReport { dataset, decay } => commands::qubit_report::run(&ctx, dataset.as_deref(), decay),
        Command::Simulate(args) => commands::simulate::run(&ctx, args),
        Command::Synthesize { spec } => commands::synthesize::run(&ctx, spec.as_deref()),
    }
}

/// Expands directories into their files with one of `extensions`, and sorts
/// the result lexicographically by path.
pub fn collect_inputs(paths: &[PathBuf], extensions: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in std::fs::read_dir(p).with_context(|| format!("listing {}", p.display()))? {
                let path = entry?.path();
                let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                if path.is_file() && ext.is_some_and(|e| extensions.contains(&e.as_str())) {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// A failed input item, reported on stderr and in the command's JSON.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ItemError {
    pub item: String,
    pub error: String,
}

impl ItemError {
    pub fn new(item: impl Into<String>, error: impl std::fmt::Display) -> Self {
        let e = Self {
            item: item.into(),
            error: format!("{error:#}"),
        };
        eprintln!("error: {}: {}", e.item, e.error);
        e
    }
}

pub fn display(path: &Path) -> String {
    path.display().to_string()
}
