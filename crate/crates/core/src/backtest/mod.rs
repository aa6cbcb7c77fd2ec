//! Rolling train / forecast / optimize / settle loop.
//!
//! A run has two stages. [`prepare`] walks the test period in retraining
//! periods (calendar months by default), fits the spread and quantity
//! forecasters and the monotone sensitivity ensemble on the trailing window,
//! and freezes everything the daily loop needs. [`simulate`] then solves and
//! settles each test day independently, so several scenarios or budget shares
//! can reuse one preparation.

mod config;
mod firewall;
mod metrics;
mod output;
mod pipeline;
mod settle;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::config::ConfigError;
use crate::gbt::GbtError;
use crate::market::{MarketData, MarketError};
use crate::neural::NnError;
use crate::portfolio::PortfolioError;
use crate::sensitivity::SensitivityError;

pub use config::{BacktestConfig, BudgetRule, RiskRule, CONFIG_KEYS};
pub use firewall::{AccessLog, DataAccess};
pub use metrics::{
    convergence_report, daily_returns, profit_per_dollar, sharpe_by_year, sharpe_ratio,
    sharpe_unannualized, spike_metrics, ConvergenceRow, SpikeMetrics, MIN_SPIKE_POINTS,
    TRADING_DAYS_PER_YEAR,
};
pub use output::{metrics_text, pnl_csv, write_report};
pub use pipeline::{
    anchored_curve, efficiency_sweep, prepare, sensitivity_training_set, simulate, PeriodSummary,
    PreparedBacktest, NET_QUANTITY_FEATURE,
};
pub use settle::{settle_day, DailyResult, LedgerEntry};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("insufficient history: {available_days} days available, {needed_days} needed")]
    InsufficientHistory {
        available_days: usize,
        needed_days: usize,
    },
    #[error("invalid backtest configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("{got} points, at least {needed} required")]
    TooFewPoints { got: usize, needed: usize },
    #[error("returns have zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error("forecasting for period starting {date}: {source}")]
    Forecast { date: NaiveDate, source: NnError },
    #[error("sensitivity fit for period starting {date}: {source}")]
    Gbt { date: NaiveDate, source: GbtError },
    #[error("portfolio for {date}: {source}")]
    Portfolio { date: NaiveDate, source: PortfolioError },
    #[error("settlement for {date}: {source}")]
    Settlement { date: NaiveDate, source: SensitivityError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl BacktestError {
    /// Failures of a numerical routine, as opposed to bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            BacktestError::ZeroVariance => true,
            BacktestError::Forecast { source, .. } => matches!(source, NnError::NonFiniteLoss { .. }),
            BacktestError::Gbt { source, .. } => matches!(source, GbtError::NonFinite(_)),
            BacktestError::Portfolio { source, .. } => !matches!(
                source,
                PortfolioError::InvalidInstance(_) | PortfolioError::InvalidBeta(_)
            ),
            _ => false,
        }
    }
}

/// How the trader's own price impact enters optimization and settlement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    /// Optimize and settle without any shift.
    NoPs,
    /// Optimize without the shift, settle with it.
    PartialPs,
    /// Optimize and settle with the fitted shift.
    FullPs,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::NoPs, Scenario::PartialPs, Scenario::FullPs];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::NoPs => "no-ps",
            Scenario::PartialPs => "partial-ps",
            Scenario::FullPs => "full-ps",
        }
    }

    pub fn optimizes_with_shift(self) -> bool {
        self == Scenario::FullPs
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = BacktestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "no-ps" => Ok(Scenario::NoPs),
            "partial-ps" => Ok(Scenario::PartialPs),
            "full-ps" => Ok(Scenario::FullPs),
            other => Err(BacktestError::InvalidConfig(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyPoint {
    pub share: f64,
    pub total_net: f64,
    pub profit_per_dollar: f64,
    /// Annualized over the whole test period; `None` when undefined.
    pub sharpe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub days: Vec<DailyResult>,
    pub budgets: Vec<f64>,
    pub risk_limits: Vec<f64>,
    pub cumulative_net: Vec<f64>,
    /// `[day][hour]` shift applied in settlement.
    pub applied_shift: Vec<Vec<f64>>,
    pub spike: Option<SpikeMetrics>,
    pub convergence: Vec<ConvergenceRow>,
    pub profit_per_dollar: f64,
    pub sharpe_by_year: Vec<(i32, Option<f64>)>,
    /// Days whose solve stopped at the node limit and used the incumbent.
    pub node_limit_days: usize,
    pub firewall_violations: Vec<String>,
    pub periods: Vec<PeriodSummary>,
    pub efficiency: Vec<EfficiencyPoint>,
}

impl BacktestReport {
    pub fn total_net(&self) -> f64 {
        self.cumulative_net.last().copied().unwrap_or(0.0)
    }

    pub fn mean_budget(&self) -> f64 {
        mean(&self.budgets)
    }

    pub fn mean_risk_limit(&self) -> f64 {
        mean(&self.risk_limits)
    }

    /// Whether profit per dollar never rises with the share; `None` without
    /// at least two sweep points.
    pub fn efficiency_non_increasing(&self) -> Option<bool> {
        (self.efficiency.len() >= 2).then(|| {
            let mut pts: Vec<&EfficiencyPoint> = self.efficiency.iter().collect();
            pts.sort_by(|a, b| a.share.total_cmp(&b.share));
            pts.windows(2)
                .all(|w| w[1].profit_per_dollar <= w[0].profit_per_dollar)
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Prepares, simulates `config.scenario` and, if `config.shares` is not
/// empty, sweeps the budget shares on the same preparation.
pub fn run_backtest(
    data: &MarketData,
    config: &BacktestConfig,
    seed: u64,
) -> Result<BacktestReport, BacktestError> {
    let prepared = prepare(data, config, seed)?;
    let mut report = simulate(data, &prepared, config, config.scenario)?;
    if !config.shares.is_empty() {
        report.efficiency = efficiency_sweep(data, &prepared, config, config.scenario)?;
    }
    Ok(report)
}
