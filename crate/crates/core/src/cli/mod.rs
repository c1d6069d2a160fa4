//! Batch front end: scenario parsing, command dispatch and result files.

mod commands;
mod config;
mod output;

pub use commands::{execute, Command, CommandOutput};
pub use config::{
    BiasVarSection, CurveSection, DecomposeSection, GallerySection, ProbeSection, ScenarioConfig,
    SimulateSection,
};
pub use output::{sha256_hex, CsvTable, OutputFile, SCHEMA_VERSION};

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use serde::Serialize;
use thiserror::Error;

use crate::decomp::DecompError;
use crate::experiments::ExperimentError;
use crate::models::{FitError, ModelSpec, RegimeFitError};
use crate::rng::SeedLedger;
use crate::world::WorldError;

#[derive(Debug, Parser)]
#[command(
    name = "errdecomp",
    version,
    about = "Simulate worlds and decompose prediction error"
)]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides world.master_seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Worker threads; never changes the outputs.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=1024))]
    pub workers: Option<u64>,
    /// Overrides the replicate count of biasvar and curve sections.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Invariant(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidSpec { .. } => CliError::Config(format!("models: {e}")),
            _ => CliError::Numerical(format!("models: {e}")),
        }
    }
}

impl From<RegimeFitError> for CliError {
    fn from(e: RegimeFitError) -> Self {
        match CliError::from(e.source.clone()) {
            CliError::Config(_) => CliError::Config(format!("models: {e}")),
            _ => CliError::Numerical(format!("models: {e}")),
        }
    }
}

impl From<WorldError> for CliError {
    fn from(e: WorldError) -> Self {
        match e {
            WorldError::InvalidSpec { .. } => CliError::Config(format!("world: {e}")),
            WorldError::EmptySelection { .. } => CliError::Numerical(format!("world: {e}")),
            WorldError::DimensionMismatch { .. } => CliError::Invariant(format!("world: {e}")),
        }
    }
}

impl From<DecompError> for CliError {
    fn from(e: DecompError) -> Self {
        let msg = format!("decomp: {e}");
        match e {
            DecompError::InvariantBreach { .. }
            | DecompError::MissingRegime(_)
            | DecompError::DimensionMismatch { .. } => CliError::Invariant(msg),
            DecompError::TooFewReplicates { .. } | DecompError::NoSelectionRule => {
                CliError::Config(msg)
            }
            DecompError::World(w) => w.into(),
            DecompError::Fit(f) => f.into(),
            _ => CliError::Numerical(msg),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let msg = format!("experiments: {e}");
        match e {
            ExperimentError::InvalidAxis { .. } | ExperimentError::InvalidScenario { .. } => {
                CliError::Config(msg)
            }
            ExperimentError::Cell { source, .. } | ExperimentError::Decomp(source) => {
                match CliError::from(source) {
                    CliError::Invariant(_) => CliError::Invariant(msg),
                    _ => CliError::Numerical(msg),
                }
            }
            ExperimentError::Fit { .. } => CliError::Numerical(msg),
            ExperimentError::World(w) => w.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub validate_ms: f64,
    pub compute_ms: f64,
    pub serialize_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// SHA-256 of the scenario file bytes.
    pub config_sha256: String,
    pub master_seed: u64,
    pub workers: Option<u64>,
    pub files: Vec<FileEntry>,
    pub timings: Timings,
    /// Every random substream label consumed during the run.
    pub seed_ledger: Vec<String>,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub summary: String,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Validates the scenario, runs `args.command` and writes its outputs plus
/// `manifest.json` into `args.out`. Nothing is written unless the whole
/// command succeeds.
pub fn run(args: &Args) -> Result<RunOutcome, CliError> {
    let t0 = Instant::now();
    let text = std::fs::read(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let text_str = String::from_utf8(text.clone())
        .map_err(|_| CliError::Config(format!("{} is not UTF-8", args.config.display())))?;
    let mut cfg =
        ScenarioConfig::from_toml(&text_str)?.with_overrides(args.seed, args.replicates)?;
    args.command.check(&cfg)?;
    let ledger = SeedLedger::recording();
    cfg.world.attach_ledger(ledger.clone());
    let validate_ms = ms(t0);

    let t1 = Instant::now();
    let output = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Other(format!("thread pool: {e}")))?
            .install(|| execute(args.command, &cfg))?,
        None => execute(args.command, &cfg)?,
    };
    let compute_ms = ms(t1);

    let t2 = Instant::now();
    let mut seed_ledger = ledger.labels();
    if let ModelSpec::Mlp(s) = &cfg.model {
        seed_ledger.push(format!("mlp/init (init_seed={})", s.init_seed));
        seed_ledger.push(format!("mlp/shuffle (init_seed={})", s.init_seed));
    }
    let files: Vec<FileEntry> = output
        .files
        .iter()
        .map(|f| FileEntry {
            name: f.name.clone(),
            sha256: f.sha256(),
            bytes: f.bytes.len(),
        })
        .collect();
    let mut manifest = RunManifest {
        artifact: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: args.command.name(),
        config_sha256: sha256_hex(&text),
        master_seed: cfg.world.master_seed,
        workers: args.workers,
        files,
        timings: Timings {
            validate_ms,
            compute_ms,
            serialize_ms: 0.0,
        },
        seed_ledger,
    };
    manifest.timings.serialize_ms = ms(t2);

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    for f in output
        .files
        .iter()
        .chain(std::iter::once(&output::json_file(
            "manifest.json",
            &manifest,
        )))
    {
        let path = args.out.join(&f.name);
        std::fs::write(&path, &f.bytes)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(RunOutcome {
        manifest,
        summary: output.summary,
    })
}
