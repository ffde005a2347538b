//! Batch command-line driver. Each subcommand reads a JSON config (optional),
//! applies flag overrides, writes its outputs together with the resolved
//! config, and reports assets that could not be processed.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use volform::eval::AssetIssue;

pub use config::UsageError;

#[derive(Debug, Parser)]
#[command(name = "volform", version, about = "Realized-volatility forecasting toolkit")]
pub struct Cli {
    /// JSON config file for the subcommand; flags override its keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Validate the config and inputs without computing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Intraday prices to a daily (rv, ret) panel.
    Ingest(IngestArgs),
    /// Synthetic RFSV or QRH panel.
    Simulate(SimulateArgs),
    /// Per-asset Hurst or QRH parameter estimates.
    Estimate(EstimateArgs),
    /// Train a pooled LSTM ensemble.
    Train(TrainArgs),
    /// Continue training a checkpoint on a subset of the panel.
    FineTune(FineTuneArgs),
    /// Sliding-window out-of-sample evaluation against a baseline.
    Backtest(BacktestArgs),
    /// Input-gradient profiles of an LSTM ensemble.
    Sensitivities(SensitivitiesArgs),
    /// Blend-weight or sequence-length curves.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub trim_minutes: Option<u32>,
    /// drop_missing or intersect_dates.
    #[arg(long)]
    pub align: Option<String>,
    /// CSV with columns asset_id,group.
    #[arg(long)]
    pub groups: Option<PathBuf>,
    /// Write the panel unscaled.
    #[arg(long)]
    pub no_scale: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// rfsv or qrh.
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub n_assets: Option<usize>,
    #[arg(long)]
    pub n_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hurst: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// .json for full fits, anything else for CSV.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// hurst or qrh.
    #[arg(long)]
    pub estimator: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub input_dim: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Comma-separated member seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct FineTuneArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// head_only or all_params.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Comma-separated asset ids to tune on.
    #[arg(long, value_delimiter = ',')]
    pub assets: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Fixed QRH parameters `a,b,c` for every qrh_fixed model; adds one if
    /// the model list has none.
    #[arg(long, value_name = "A,B,C")]
    pub fixed_qrh: Option<String>,
    #[arg(long)]
    pub window_len: Option<usize>,
    #[arg(long)]
    pub refit_every: Option<usize>,
    #[arg(long)]
    pub audit_probes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SensitivitiesArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON path; a CSV of the cross-asset profile is written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// CSV path; the full result is also written as JSON next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// lambda or seq_len.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seq_lens: Option<Vec<usize>>,
}

/// What a successful run leaves behind besides its files.
#[derive(Debug, Default)]
pub struct Outcome {
    /// Assets skipped during the run.
    pub issues: Vec<AssetIssue>,
}

/// Runs one parsed invocation. Thread-pool and logger setup are left to the
/// caller.
pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let file = cli.config.as_deref().map(config::read_config_file).transpose()?;
    let ctx = commands::Context {
        file: file.as_ref(),
        dry_run: cli.dry_run,
    };
    match &cli.command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Simulate(a) => commands::simulate(&ctx, a),
        Command::Estimate(a) => commands::estimate(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::FineTune(a) => commands::fine_tune(&ctx, a),
        Command::Backtest(a) => commands::backtest(&ctx, a),
        Command::Sensitivities(a) => commands::sensitivities(&ctx, a),
        Command::Sweep(a) => commands::sweep(&ctx, a),
    }
}
