//! The `tidal` command line: ingest, synth, train, predict, evaluate, backtest
//! and report, each writing its outputs plus a `manifest.json` into `--out`.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error
//! (including stale artifacts), 4 numerical divergence.

mod artifacts;
mod commands;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

pub use artifacts::{read_verified, sha256_hex, RunManifest, LOCK_FILE, MANIFEST_FILE};

use crate::backtest::BacktestError;
use crate::evaluation::EvalError;
use crate::market_data::MarketDataError;
use crate::model::{CheckpointError, ModelError};
use crate::synth::SynthError;
use crate::training::TrainingError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stale artifact {}: manifest digest {expected}, file digest {actual}", path.display())]
    Stale {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("numerical divergence: {0}")]
    Divergence(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Stale { .. } | CliError::Io(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<MarketDataError> for CliError {
    fn from(e: MarketDataError) -> Self {
        match e {
            MarketDataError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Degenerate(_) => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config(m) => CliError::Config(m),
            TrainingError::Divergence(_) => CliError::Divergence(e.to_string()),
            TrainingError::Model(m) => m.into(),
            TrainingError::Io(io) => CliError::Io(io),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        match e {
            BacktestError::Config(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tidal",
    version,
    about = "Topic and expectation stock-return prediction toolkit"
)]
pub struct Cli {
    /// Flat `key = value` configuration file; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Random seed; overrides the config file.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory for this command's artifacts.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a bar file (and optional universe file) into a bar store.
    Ingest(IngestArgs),
    /// Generate synthetic bars with a planted predictive signal.
    Synth(SynthArgs),
    /// Train a model on a bar store.
    Train(TrainArgs),
    /// Predict returns with a trained model.
    Predict(PredictArgs),
    /// Compute IC, ICIR, Rank IC and Rank ICIR.
    Evaluate(EvaluateArgs),
    /// Simulate the top-k dropout strategy.
    Backtest(BacktestArgs),
    /// Merge evaluation and backtest results into one bundle.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// CSV with columns stock_id,date,open,high,low,close,vwap,volume.
    #[arg(long)]
    pub bars: PathBuf,
    /// CSV with columns date,stock_id. Defaults to every stock with a bar that day.
    #[arg(long)]
    pub universe: Option<PathBuf>,
    /// Skip malformed rows and list them in the manifest instead of failing.
    #[arg(long)]
    pub skip_bad_rows: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of stocks
    #[arg(long)]
    pub stocks: Option<usize>,
    /// Number of trading days
    #[arg(long)]
    pub days: Option<usize>,
    /// Coefficient of the planted signal.
    #[arg(long)]
    pub signal: Option<f64>,
    /// Multiplier on the idiosyncratic noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Number of sectors sharing a common factor
    #[arg(long)]
    pub sectors: Option<usize>,
    /// Daily volatility of each sector factor
    #[arg(long)]
    pub sector_volatility: Option<f64>,
    /// Coefficient of the planted sector-level signal
    #[arg(long)]
    pub sector_signal: Option<f64>,
    /// Daily volatility of the market factor
    #[arg(long)]
    pub market_volatility: Option<f64>,
    /// First calendar date (YYYY-MM-DD).
    #[arg(long)]
    pub start: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub store: PathBuf,
    /// First training date. Without a training range the first 70% of labelled days train and the rest validate
    #[arg(long)]
    pub train_start: Option<NaiveDate>,
    /// Last training date
    #[arg(long)]
    pub train_end: Option<NaiveDate>,
    /// First validation date
    #[arg(long)]
    pub valid_start: Option<NaiveDate>,
    /// Last validation date
    #[arg(long)]
    pub valid_end: Option<NaiveDate>,
    /// Number of passes over the training range
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Hidden and topic dimension
    #[arg(long)]
    pub embedding_size: Option<usize>,
    /// Dropout rate on the prediction-head inputs
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Days per truncated backpropagation window
    #[arg(long)]
    pub bptt_window: Option<usize>,
    /// `full` or `plain_lstm`.
    #[arg(long)]
    pub variant: Option<String>,
    /// Any training key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub store: PathBuf,
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// First date to predict; earlier panels only warm up the recurrent state.
    #[arg(long)]
    pub start: Option<NaiveDate>,
    /// Last date to predict
    #[arg(long)]
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `date,stock_id,prediction` CSV.
    #[arg(long)]
    pub predictions: PathBuf,
    /// `date,stock_id,label` CSV.
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// `date,stock_id,prediction` CSV.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Directory written by `ingest`.
    #[arg(long)]
    pub store: PathBuf,
    /// Number of stocks held
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum number of holdings replaced per day
    #[arg(long)]
    pub d: Option<usize>,
    /// Cost as a fraction of traded value
    #[arg(long)]
    pub transaction_cost_rate: Option<f64>,
    /// Starting capital
    #[arg(long)]
    pub initial_cash: Option<f64>,
    /// `date,close` index series; defaults to the equal-weight universe.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory written by `evaluate`.
    #[arg(long)]
    pub evaluation: PathBuf,
    /// Directory written by `backtest`.
    #[arg(long)]
    pub backtest: PathBuf,
}

const SYNTH_KEYS: [&str; 8] = [
    "stocks",
    "days",
    "signal",
    "noise",
    "sectors",
    "sector_volatility",
    "sector_signal",
    "market_volatility",
];
const BACKTEST_KEYS: [&str; 5] = [
    "k",
    "d",
    "transaction_cost_rate",
    "initial_cash",
    "trading_days_per_year",
];

/// Parsed `--config` file. Keys are checked against every command's vocabulary.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    pub values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected key = value", i + 1))
            })?;
            let k = k.trim();
            let known = crate::training::CONFIG_KEYS.contains(&k)
                || SYNTH_KEYS.contains(&k)
                || BACKTEST_KEYS.contains(&k);
            if !known {
                return Err(CliError::Config(format!("unknown config key {k:?}")));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.values
            .get(key)
            .map(|raw| {
                raw.parse()
                    .map_err(|_| CliError::Config(format!("invalid value {raw:?} for {key}")))
            })
            .transpose()
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            ConfigFile::parse(&text)?
        }
        None => ConfigFile::default(),
    };
    match &cli.command {
        Command::Ingest(a) => commands::ingest(cli, a),
        Command::Synth(a) => commands::synth(cli, &config, a),
        Command::Train(a) => commands::train(cli, &config, a),
        Command::Predict(a) => commands::predict(cli, a),
        Command::Evaluate(a) => commands::evaluate(cli, a),
        Command::Backtest(a) => commands::backtest(cli, &config, a),
        Command::Report(a) => commands::report(cli, a),
    }
}
