//! `svcgraph`: simulate, ingest, train, score, diagnose, inject-eval, pca.
//!
//! Exit codes: 0 success, 1 numerical or internal failure, 2 usage or
//! configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use svcgraph_core::gae::{ModelError, ModelFileError};
use svcgraph_core::graph::GraphError;
use svcgraph_core::inject::InjectError;
use svcgraph_core::kv::KvError;
use svcgraph_core::scoring::ScoreError;
use svcgraph_core::sim::SimError;
use svcgraph_core::telemetry::TelemetryError;

#[derive(Debug, Parser)]
#[command(name = "svcgraph", version, about = "Call-graph embedding anomaly detection pipeline")]
pub struct Cli {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for simulation, training, and injection.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario into a snapshot corpus.
    Simulate(SimulateArgs),
    /// Aggregate a telemetry CSV into a snapshot corpus.
    Ingest(IngestArgs),
    /// Train a model on the corpus train partition.
    Train(TrainArgs),
    /// Score snapshots against the reference embedding.
    Score(ScoreArgs),
    /// Compare a service's fan-out ratios between two minutes.
    Diagnose(DiagnoseArgs),
    /// Inject load along a call path and evaluate detection.
    InjectEval(InjectArgs),
    /// Project embeddings onto two principal components.
    Pca(PcaArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Also write the raw telemetry stream as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Telemetry CSV: `timestamp,source,destination,tps`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Profile for minutes outside every window.
    #[arg(long)]
    pub profile: Option<String>,
    /// `start_minute,end_minute,profile`; repeatable.
    #[arg(long)]
    pub window: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `train`, `reference`, `evaluate`, or `minutes:START-END` (inclusive).
    #[arg(long)]
    pub select: Option<String>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Service name.
    #[arg(long)]
    pub service: Option<String>,
    #[arg(long)]
    pub minute_a: Option<i64>,
    #[arg(long)]
    pub minute_b: Option<i64>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Services on the injected path.
    #[arg(long)]
    pub path_length: Option<usize>,
    #[arg(long)]
    pub pct_low: Option<f64>,
    #[arg(long)]
    pub pct_high: Option<f64>,
    /// Number of reference minutes to perturb.
    #[arg(long)]
    pub minutes: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `reference` (mean reference embedding) or `minute:M`.
    #[arg(long)]
    pub select: Option<String>,
    /// Output CSV; defaults to `pca.csv` in the output directory.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Internal(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Internal(e) => e,
        }
    }

    pub fn internal(e: impl Into<anyhow::Error>) -> Self {
        CliError::Internal(e.into())
    }
}

impl From<KvError> for CliError {
    fn from(e: KvError) -> Self {
        CliError::Usage(e.into())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.into())
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        CliError::Usage(e.into())
    }
}

/// Reading problems are the caller's; use [`CliError::internal`] for writes.
impl From<TelemetryError> for CliError {
    fn from(e: TelemetryError) -> Self {
        CliError::Usage(e.into())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) | ModelError::Diverged { .. } => CliError::Internal(e.into()),
            _ => CliError::Usage(e.into()),
        }
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        match e {
            ModelFileError::Model(m) => m.into(),
            other => CliError::Usage(other.into()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Model(m) => m.into(),
            ScoreError::DegenerateData { .. } => CliError::Internal(e.into()),
            other => CliError::Usage(other.into()),
        }
    }
}

impl From<InjectError> for CliError {
    fn from(e: InjectError) -> Self {
        match e {
            InjectError::Score(s) => s.into(),
            other => CliError::Usage(other.into()),
        }
    }
}

/// Error chain joined by `: `, skipping causes already spelled out by the
/// message above them.
fn render(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !out.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(e.error()));
            ExitCode::from(e.code())
        }
    }
}
