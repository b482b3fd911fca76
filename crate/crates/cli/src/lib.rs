//! `pref-arena`: ingest comparison data, fit the hierarchical outcome model,
//! emit leaderboards and decompositions, simulate campaigns and serve
//! adaptive tournaments.

pub mod commands;
pub mod config;
pub mod report;

use std::path::PathBuf;

use arena_core::decompose::DecomposeError;
use arena_core::io::IoError;
use arena_core::sampler::SamplerError;
use arena_core::scoring::ScoringError;
use arena_core::simulator::SimError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

/// Exit status when any parameter fails the convergence gate.
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const MAX_RHAT: f64 = 1.05;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("sampler: {0}")]
    Sampler(#[from] SamplerError),
    #[error("scoring: {0}")]
    Scoring(#[from] ScoringError),
    #[error("decomposition: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("service: {0}")]
    Service(#[from] arena_service::ServiceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no draw files in {0}")]
    MissingDraws(PathBuf),
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Parser)]
#[command(name = "pref-arena", version, about = "Demographic-aware pairwise preference leaderboards")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalOpts {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated metric names.
    #[arg(long, global = true, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Country weights, e.g. `US=0.6,UK=0.4`.
    #[arg(long, global = true)]
    pub country_mix: Option<String>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset and write it in canonical form.
    Ingest(IngestArgs),
    /// Fit each metric and write draws and diagnostics.
    Fit(FitArgs),
    /// Build leaderboards and reports from draw files.
    Leaderboard(LeaderboardArgs),
    /// Generate a synthetic campaign.
    Simulate(SimulateArgs),
    /// Run the tournament HTTP service.
    Serve(ServeArgs),
    /// Two-way decomposition of tie rates.
    Decompose(DecomposeArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Records file (one JSON object per line).
    pub dataset: Option<PathBuf>,
    /// JSON field mapping for non-canonical input.
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    /// Register unseen group labels instead of rejecting them.
    #[arg(long)]
    pub extend_groups: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Allow metrics without records; they sample the prior.
    #[arg(long)]
    pub allow_prior: bool,
}

#[derive(Debug, Clone, Args)]
pub struct LeaderboardArgs {
    /// Directory of draw files; defaults to `<out>/draws`.
    #[arg(long)]
    pub draws_dir: Option<PathBuf>,
    /// Census JSON for post-stratified boards.
    #[arg(long)]
    pub census: Option<PathBuf>,
    /// Records for tie-rate and decomposition reports.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub mapping: Option<PathBuf>,
    #[arg(long)]
    pub extend_groups: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PairingArg {
    Uniform,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PopulationArg {
    Uniform,
    Skewed,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 6)]
    pub models: usize,
    #[arg(long, default_value_t = 20_000)]
    pub comparisons: usize,
    /// True adjustment scale on every axis.
    #[arg(long, default_value_t = 0.3)]
    pub tau: f64,
    /// True tie propensity for every metric.
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    #[arg(long, value_enum, default_value_t = PairingArg::Uniform)]
    pub pairing: PairingArg,
    #[arg(long, value_enum, default_value_t = PopulationArg::Uniform)]
    pub population: PopulationArg,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[arg(long, env = "PREF_ARENA_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Event log directory; defaults to `<out>/events`.
    #[arg(long, env = "PREF_ARENA_LOG_DIR")]
    pub log_dir: Option<PathBuf>,
    /// Comma-separated model roster.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Take the roster from a records file instead.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Comma-separated strata; defaults to the 22 standard tournaments.
    #[arg(long, value_delimiter = ',')]
    pub strata: Option<Vec<String>>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub sigma0: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub dyn_tau: Option<f64>,
    #[arg(long)]
    pub p_draw: Option<f64>,
    #[arg(long)]
    pub exploration_eps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightingArg {
    Unweighted,
    Counts,
}

#[derive(Debug, Clone, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Restrict to one country.
    #[arg(long)]
    pub country: Option<String>,
    /// Row axis; with `--cols`, restricts to one axis pair.
    #[arg(long)]
    pub rows: Option<String>,
    #[arg(long)]
    pub cols: Option<String>,
    #[arg(long, value_enum, default_value_t = WeightingArg::Unweighted)]
    pub weighting: WeightingArg,
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> Result<u8, CliError> {
    let cfg = config::RunConfig::resolve(&cli.global)?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&cfg, &a),
        Command::Fit(a) => commands::fit(&cfg, &a),
        Command::Leaderboard(a) => commands::leaderboard(&cfg, &a),
        Command::Simulate(a) => commands::simulate(&cfg, &a),
        Command::Serve(a) => commands::serve(&cfg, &a),
        Command::Decompose(a) => commands::decompose(&cfg, &a),
    }
}
