//! `vbid`: data ingestion, forecasting, sensitivity fitting, portfolio
//! optimization and backtesting from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

mod commands;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use vbid_core::backtest::{BacktestError, CONFIG_KEYS};
use vbid_core::gbt::GbtError;
use vbid_core::neural::NnError;
use vbid_core::portfolio::PortfolioError;

#[derive(Debug, Parser)]
#[command(name = "vbid", version, about = "Virtual-bid forecasting, optimization and backtesting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Root seed; every random stream is derived from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Line-based `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding lmp.csv, features.csv and vbids.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Reference node; defaults to the one recorded in the data directory.
    #[arg(long)]
    pub ref_node: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw CSVs, recompute spreads and write a normalized data directory.
    Ingest {
        #[arg(long)]
        lmp: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        vbids: PathBuf,
        #[arg(long)]
        ref_node: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a seeded synthetic market.
    Synth {
        #[arg(long, default_value_t = 396)]
        days: usize,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        /// First day, YYYY-MM-DD.
        #[arg(long, default_value = "2021-01-01")]
        start: String,
        /// Spread change per MWh of market net virtual quantity.
        #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
        sensitivity_slope: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the nodal spread forecaster and save a model bundle.
    TrainSpread {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<String>,
        /// Train on the days before this date (default: end of data).
        #[arg(long)]
        end: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the market-wide net virtual quantity forecaster.
    TrainQuantity {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        end: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the monotone sensitivity ensemble; optionally write one day's curves.
    FitSensitivity {
        #[command(flatten)]
        common: Common,
        /// Data directory; alternatively pass --lmp, --features and --vbids.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        lmp: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        vbids: Option<PathBuf>,
        #[arg(long)]
        ref_node: Option<String>,
        /// Day (YYYY-MM-DD) to fit before and to write curves for.
        #[arg(long)]
        date: Option<String>,
        /// Quantity model bundle whose forecast anchors the curves (default: anchor at 0).
        #[arg(long)]
        quantity_model: Option<PathBuf>,
        /// Where to write the day's hourly curves as CSV; needs --date.
        #[arg(long)]
        pwl_out: Option<PathBuf>,
        /// Ensemble dump file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve one day's portfolio.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Delivery day, YYYY-MM-DD.
        #[arg(long)]
        date: String,
        /// Spread model bundle; without it the scenario mean is the forecast.
        #[arg(long)]
        spread_model: Option<PathBuf>,
        /// Hourly curves from fit-sensitivity; without them the shift is zero.
        #[arg(long)]
        pwl: Option<PathBuf>,
        /// Daily collateral budget, $.
        #[arg(long)]
        budget: f64,
        /// Risk limit in $, or `none` (default: equal to the budget).
        #[arg(long)]
        risk: Option<String>,
        #[arg(long)]
        beta: Option<f64>,
        /// full-ps or no-ps.
        #[arg(long, default_value = "full-ps")]
        mode: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the rolling backtest.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// no-ps, partial-ps or full-ps (overrides the config).
        #[arg(long)]
        scenario: Option<String>,
        /// Threads for the daily loop; results do not depend on it.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a run directory's manifest and print its metrics.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

/// Bad command-line usage that clap itself cannot detect.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (--config file, `key = value` per line):\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:width$}  {d}\n"));
    }
    s
}

/// Data errors exit 2 and numerical failures exit 3.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<BacktestError>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
        if let Some(NnError::NonFiniteLoss { .. }) = cause.downcast_ref::<NnError>() {
            return 3;
        }
        if let Some(GbtError::NonFinite(_)) = cause.downcast_ref::<GbtError>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<PortfolioError>() {
            return match e {
                PortfolioError::InvalidInstance(_)
                | PortfolioError::InvalidBeta(_)
                | PortfolioError::InvalidPwl(_)
                | PortfolioError::InfeasibleBounds { .. }
                | PortfolioError::Sensitivity(_) => 2,
                _ => 3,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let mut cmd = Cli::command();
    for name in ["train-spread", "train-quantity", "fit-sensitivity", "optimize", "backtest"] {
        cmd = cmd.mut_subcommand(name, |c| c.after_long_help(config_help()));
    }
    let cli = match cmd
        .try_get_matches()
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            eprintln!("error: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            eprintln!("exit_code = {code}");
            ExitCode::from(code)
        }
    }
}
