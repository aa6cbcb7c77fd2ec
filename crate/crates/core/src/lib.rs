//! Machine-learning-driven virtual bidding for two-settlement electricity markets.
//!
//! The crate is organized along the trading pipeline:
//!
//! * [`market`] ingests or synthesizes DA/RT price panels, features and
//!   market-wide virtual quantities.
//! * [`scaling`] holds the sigmoid target scaling and feature z-scoring shared by
//!   the forecasters.
//! * [`neural`] trains MLP and LSTM regressors for nodal spreads and the
//!   market-wide net virtual quantity.
//! * [`gbt`] fits gradient boosted trees that are non-increasing in one feature
//!   and turns them into step and piecewise-linear sensitivity curves.
//! * [`sensitivity`] evaluates the hourly piecewise-linear spread shift.
//! * [`portfolio`] assembles the risk-constrained mixed-integer program and
//!   solves it by enumeration or branch-and-bound.
//! * [`backtest`] runs the rolling train/forecast/optimize/settle loop and
//!   computes profitability and efficiency metrics.

pub mod backtest;
pub mod config;
pub mod gbt;
pub mod market;
pub mod neural;
pub mod portfolio;
pub mod scaling;
pub mod seed;
pub mod sensitivity;

pub use market::{
    BidPriceConvention, CostSchedule, FeatureFrame, FeatureSet, LmpRecord, MarketVirtualQuantity,
    SpreadPanel,
};
pub use sensitivity::PwlSensitivity;
