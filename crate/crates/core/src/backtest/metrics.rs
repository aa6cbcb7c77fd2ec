//! Forecast and portfolio performance metrics.

use std::collections::BTreeMap;

use chrono::Datelike;

use super::{BacktestError, DailyResult};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
pub const MIN_SPIKE_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeMetrics {
    pub accuracy: f64,
    pub rmse: f64,
    /// Size of the top-1% subset the metrics were computed on.
    pub points: usize,
}

/// Sign accuracy and RMSE on the 1% of points with the largest `|actual|`
/// (at least one point). A zero counts as positive.
pub fn spike_metrics(forecasts: &[f64], actuals: &[f64]) -> Result<SpikeMetrics, BacktestError> {
    if forecasts.len() != actuals.len() {
        return Err(BacktestError::InvalidData(format!(
            "{} forecasts for {} actuals",
            forecasts.len(),
            actuals.len()
        )));
    }
    if actuals.len() < MIN_SPIKE_POINTS {
        return Err(BacktestError::TooFewPoints {
            got: actuals.len(),
            needed: MIN_SPIKE_POINTS,
        });
    }
    let mut order: Vec<usize> = (0..actuals.len()).collect();
    // Stable on index for equal magnitudes.
    order.sort_by(|&a, &b| actuals[b].abs().total_cmp(&actuals[a].abs()).then(a.cmp(&b)));
    let k = (actuals.len() / 100).max(1);
    let top = &order[..k];
    let hits = top
        .iter()
        .filter(|&&i| (forecasts[i] >= 0.0) == (actuals[i] >= 0.0))
        .count();
    let sq: f64 = top.iter().map(|&i| (forecasts[i] - actuals[i]).powi(2)).sum();
    Ok(SpikeMetrics {
        accuracy: hits as f64 / k as f64,
        rmse: (sq / k as f64).sqrt(),
        points: k,
    })
}

/// Mean over standard deviation (sample, n - 1) of the excess returns,
/// multiplied by `sqrt(252)`.
pub fn sharpe_ratio(returns: &[f64], risk_free_daily: f64) -> Result<f64, BacktestError> {
    Ok(sharpe_unannualized(returns, risk_free_daily)? * TRADING_DAYS_PER_YEAR.sqrt())
}

pub fn sharpe_unannualized(returns: &[f64], risk_free_daily: f64) -> Result<f64, BacktestError> {
    if returns.len() < 2 {
        return Err(BacktestError::TooFewPoints {
            got: returns.len(),
            needed: 2,
        });
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - risk_free_daily).collect();
    let n = excess.len() as f64;
    let mean = excess.iter().sum::<f64>() / n;
    let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 1e-12 * mean.abs().max(1e-300)) || sd == 0.0 {
        return Err(BacktestError::ZeroVariance);
    }
    Ok(mean / sd)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub year: i32,
    /// Mean |realized spread| over all node-hours.
    pub without_bidding: f64,
    /// Mean |realized spread + own shift|; the shift is nonzero only where
    /// the trader holds a net position.
    pub with_bidding: f64,
}

/// Per calendar year of the test period. `realized[d][node][h]` and
/// `shift[d][h]` are aligned with `days`.
pub fn convergence_report(
    days: &[DailyResult],
    realized: &[Vec<Vec<f64>>],
    shift: &[Vec<f64>],
) -> Vec<ConvergenceRow> {
    let mut acc: BTreeMap<i32, (f64, f64, usize)> = BTreeMap::new();
    for ((day, spreads), shifts) in days.iter().zip(realized).zip(shift) {
        let e = acc.entry(day.date.year()).or_insert((0.0, 0.0, 0));
        for node in spreads {
            for (s, dx) in node.iter().zip(shifts) {
                e.0 += s.abs();
                e.1 += (s + dx).abs();
                e.2 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(year, (a, b, n))| ConvergenceRow {
            year,
            without_bidding: a / n.max(1) as f64,
            with_bidding: b / n.max(1) as f64,
        })
        .collect()
}

/// Daily return on the posted budget; zero on days without a budget.
pub fn daily_returns(days: &[DailyResult], budgets: &[f64]) -> Vec<f64> {
    days.iter()
        .zip(budgets)
        .map(|(d, b)| if *b > 0.0 { d.net / b } else { 0.0 })
        .collect()
}

/// Annualized Sharpe ratio per calendar year; `None` where it is undefined.
pub fn sharpe_by_year(
    days: &[DailyResult],
    budgets: &[f64],
    risk_free_annual: f64,
) -> Vec<(i32, Option<f64>)> {
    let returns = daily_returns(days, budgets);
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for (d, r) in days.iter().zip(returns) {
        by_year.entry(d.date.year()).or_default().push(r);
    }
    let rf = risk_free_annual / TRADING_DAYS_PER_YEAR;
    by_year
        .into_iter()
        .map(|(y, r)| (y, sharpe_ratio(&r, rf).ok()))
        .collect()
}

/// Cumulative net profit per dollar of average daily budget plus average
/// daily risk limit (the latter only when finite).
pub fn profit_per_dollar(total_net: f64, mean_budget: f64, mean_risk_limit: f64) -> f64 {
    let risk = if mean_risk_limit.is_finite() { mean_risk_limit } else { 0.0 };
    let denom = mean_budget + risk;
    if denom > 0.0 {
        total_net / denom
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    #[test]
    fn spike_perfect_and_inverted() {
        let actual: Vec<f64> = (0..300).map(|k| ((k * 37) % 101) as f64 - 50.0).collect();
        let m = spike_metrics(&actual, &actual).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.points, 3);
        let neg: Vec<f64> = actual.iter().map(|v| -v).collect();
        assert_eq!(spike_metrics(&neg, &actual).unwrap().accuracy, 0.0);
        assert!(matches!(
            spike_metrics(&actual[..50], &actual[..50]),
            Err(BacktestError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn spike_uses_top_percentile_only() {
        let mut actual = vec![1.0; 200];
        actual[7] = -100.0;
        actual[150] = 80.0;
        let mut forecast = vec![-1.0; 200];
        forecast[7] = -90.0;
        forecast[150] = 70.0;
        let m = spike_metrics(&forecast, &actual).unwrap();
        assert_eq!(m.points, 2);
        assert_eq!(m.accuracy, 1.0);
        assert!((m.rmse - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_counts_as_positive() {
        let mut actual = vec![0.5; 100];
        actual[0] = 9.0;
        let mut forecast = vec![0.0; 100];
        forecast[0] = 0.0;
        assert_eq!(spike_metrics(&forecast, &actual).unwrap().accuracy, 1.0);
    }

    #[test]
    fn sharpe_hand_values() {
        assert!(matches!(sharpe_ratio(&[0.01, 0.01], 0.0), Err(BacktestError::ZeroVariance)));
        // mean 1%, sample std of [2%, 0%] is sqrt(2) * 1%.
        let s = sharpe_unannualized(&[0.02, 0.0], 0.0).unwrap();
        assert!((s - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        let a = sharpe_ratio(&[0.02, 0.0], 0.0).unwrap();
        assert!((a - s * 252f64.sqrt()).abs() < 1e-12);
        assert!(matches!(sharpe_ratio(&[0.01], 0.0), Err(BacktestError::TooFewPoints { .. })));
    }

    #[test]
    fn convergence_without_trades_is_equal() {
        let day = DailyResult::empty(NaiveDate::from_ymd_opt(2022, 1, 1).unwrap());
        let realized = vec![vec![vec![3.0, -4.0], vec![1.0, 0.0]]];
        let rows = convergence_report(&[day], &realized, &[vec![0.0, 0.0]]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].without_bidding, 2.0);
        assert_eq!(rows[0].with_bidding, 2.0);
    }

    #[test]
    fn per_dollar_ignores_infinite_risk() {
        assert_eq!(profit_per_dollar(300.0, 100.0, 50.0), 2.0);
        assert_eq!(profit_per_dollar(300.0, 100.0, f64::INFINITY), 3.0);
        assert_eq!(profit_per_dollar(300.0, 0.0, 0.0), 0.0);
    }
}
