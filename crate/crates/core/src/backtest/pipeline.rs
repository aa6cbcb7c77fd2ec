//! Forecasting stage and daily solve-and-settle loop.

use std::ops::Range;

use chrono::{Datelike, NaiveDate, Timelike};

use super::{
    convergence_report, daily_returns, profit_per_dollar, settle_day, sharpe_by_year,
    sharpe_ratio, spike_metrics, AccessLog, BacktestConfig, BacktestError, BacktestReport,
    BudgetRule, DailyResult, EfficiencyPoint, Scenario, TRADING_DAYS_PER_YEAR,
};
use crate::gbt::{self, extract_step_function, step_to_piecewise_linear, GbtEnsemble, GbtError};
use crate::market::MarketData;
use crate::neural::{QuantityForecaster, SpreadForecaster};
use crate::portfolio::{
    solve_branch_and_bound, BranchAndBoundOptions, PortfolioError, PortfolioInstance,
    SearchStrategy,
};
use crate::seed::derive_seed;
use crate::sensitivity::{PwlSensitivity, SensitivityBounds};

const HOURS: usize = 24;
/// Shortest calendar month, used to size the minimum test period.
const MIN_MONTH_DAYS: usize = 28;

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodSummary {
    pub start: NaiveDate,
    pub days: usize,
    /// Training MSE of the spread network(s) on the scaled target.
    pub spread_loss: Option<f64>,
    pub quantity_loss: Option<f64>,
    pub sensitivity_trees: usize,
}

/// Everything the daily loop needs, frozen per retraining period. All
/// per-day vectors are indexed by test day.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedBacktest {
    pub seed: u64,
    pub first_test_day: usize,
    pub dates: Vec<NaiveDate>,
    /// `[day][node][hour]`.
    pub spread_forecast: Vec<Vec<Vec<f64>>>,
    /// `[day][hour]` forecast market-wide net virtual quantity.
    pub quantity_forecast: Vec<Vec<f64>>,
    /// `[day][hour]` fitted shift curves.
    pub pwl: Vec<Vec<PwlSensitivity>>,
    pub bounds: Vec<SensitivityBounds>,
    /// Trailing-year average daily collateral of all cleared virtual bids.
    pub market_collateral: Vec<f64>,
    pub periods: Vec<PeriodSummary>,
    pub access: AccessLog,
}

impl PreparedBacktest {
    pub fn num_days(&self) -> usize {
        self.dates.len()
    }
}

fn check_calendar(data: &MarketData) -> Result<usize, BacktestError> {
    let hours = &data.panel.hours;
    if hours.is_empty() || hours.len() % HOURS != 0 {
        return Err(BacktestError::InvalidData(format!(
            "{} hours do not form whole days",
            hours.len()
        )));
    }
    if hours[0].hour() != 0 {
        return Err(BacktestError::InvalidData("data must start at midnight".into()));
    }
    if let Some(w) = hours.windows(2).find(|w| (w[1] - w[0]).num_seconds() != 3600) {
        return Err(BacktestError::InvalidData(format!(
            "hours {} and {} are not consecutive",
            w[0], w[1]
        )));
    }
    Ok(hours.len() / HOURS)
}

fn months_between(a: NaiveDate, b: NaiveDate) -> i32 {
    (b.year() - a.year()) * 12 + b.month() as i32 - a.month() as i32
}

/// Test-day ranges of the retraining periods.
fn periods(dates: &[NaiveDate], first: usize, cadence: u32) -> Vec<(usize, usize)> {
    let mut starts = vec![first];
    for d in first + 1..dates.len() {
        let last = dates[*starts.last().expect("nonempty")];
        if dates[d].day() == 1 && months_between(last, dates[d]) >= cadence as i32 {
            starts.push(d);
        }
    }
    let mut out: Vec<(usize, usize)> = starts.windows(2).map(|w| (w[0], w[1])).collect();
    out.push((*starts.last().expect("nonempty"), dates.len()));
    out
}

/// Name of the constrained column of the sensitivity model.
pub const NET_QUANTITY_FEATURE: &str = "net_virtual_quantity";

/// Rows `[net quantity, features...]` and reference-node spread targets
/// for `hours`.
pub fn sensitivity_training_set(
    data: &MarketData,
    hours: Range<usize>,
) -> (Vec<String>, Vec<Vec<f64>>, Vec<f64>) {
    let mut names = vec![NET_QUANTITY_FEATURE.to_string()];
    names.extend(data.features.names.iter().cloned());
    let rows = hours
        .clone()
        .map(|t| {
            let mut r = Vec::with_capacity(names.len());
            r.push(data.vbids[t].net_mwh());
            r.extend_from_slice(&data.features.frames[t].values);
            r
        })
        .collect();
    let targets = data.panel.ref_spread()[hours].to_vec();
    (names, rows, targets)
}

/// Shift curve of one hour in the trader's own position `x`: the ensemble's
/// step function around the market quantity `anchor` over
/// `[anchor + x_lo, anchor + x_hi]`, moved to `x = quantity - anchor` and
/// re-based so the shift at 0 is 0.
pub fn anchored_curve(
    ensemble: &GbtEnsemble,
    features: &[f64],
    anchor: f64,
    bounds: SensitivityBounds,
    hour: usize,
) -> Result<PwlSensitivity, GbtError> {
    let mut context = Vec::with_capacity(features.len() + 1);
    context.push(anchor);
    context.extend_from_slice(features);
    let step = extract_step_function(ensemble, &context, anchor + bounds.x_lo, anchor + bounds.x_hi)?;
    let mut step = step.translate(-anchor);
    step.x_lo = bounds.x_lo;
    step.x_hi = bounds.x_hi;
    step_to_piecewise_linear(&step, hour)
}

/// Runs the forecasting stage over the whole test period.
pub fn prepare(
    data: &MarketData,
    cfg: &BacktestConfig,
    seed: u64,
) -> Result<PreparedBacktest, BacktestError> {
    cfg.validate()?;
    let total_days = check_calendar(data)?;
    let needed = cfg.train_days + MIN_MONTH_DAYS * cfg.retrain_months as usize;
    if total_days < needed {
        return Err(BacktestError::InsufficientHistory {
            available_days: total_days,
            needed_days: needed,
        });
    }
    let panel = &data.panel;
    let dates: Vec<NaiveDate> = (0..total_days)
        .map(|d| panel.hours[d * HOURS].date_naive())
        .collect();
    let first = cfg.train_days;
    let mut out = PreparedBacktest {
        seed,
        first_test_day: first,
        dates: dates[first..].to_vec(),
        spread_forecast: Vec::new(),
        quantity_forecast: Vec::new(),
        pwl: Vec::new(),
        bounds: Vec::new(),
        market_collateral: Vec::new(),
        periods: Vec::new(),
        access: AccessLog::default(),
    };

    let mut yearly: Option<(i32, SensitivityBounds, f64)> = None;
    for (k, (start, end)) in periods(&dates, first, cfg.retrain_months).into_iter().enumerate() {
        let date = dates[start];
        let train = (start - cfg.train_days) * HOURS..start * HOURS;
        let test = start * HOURS..end * HOURS;
        let decision = test.start;

        // Bounds and the collateral scale are refreshed once per year.
        if yearly.is_none_or(|(y, _, _)| y != date.year()) {
            out.access.record("position bounds", decision, train.start, train.end);
            let net: Vec<f64> = data.vbids[train.clone()].iter().map(|v| v.net_mwh()).collect();
            let bounds = SensitivityBounds::from_history(&net)?;
            let collateral: f64 = data.vbids[train.clone()]
                .iter()
                .map(|v| v.inc_cleared_mwh * cfg.costs.prox_inc + v.dec_cleared_mwh * cfg.costs.prox_dec)
                .sum::<f64>()
                / cfg.train_days as f64;
            yearly = Some((date.year(), bounds, collateral));
        }
        let (_, bounds, collateral) = yearly.expect("set above");

        let forecast_err = |source| BacktestError::Forecast { date, source };
        let (spread, quantity, spread_loss, quantity_loss) = if cfg.cheat {
            out.access.record("spread forecast", decision, test.start, test.end);
            out.access.record("quantity forecast", decision, test.start, test.end);
            let spread: Vec<Vec<f64>> = panel.spread.iter().map(|s| s[test.clone()].to_vec()).collect();
            let quantity: Vec<f64> = data.vbids[test.clone()].iter().map(|v| v.net_mwh()).collect();
            (spread, quantity, None, None)
        } else {
            out.access.record("spread training", decision, train.start, train.end);
            out.access.record("quantity training", decision, train.start, train.end);
            let mut hp = cfg.nn.clone();
            hp.seed = derive_seed(seed, &format!("spread-forecast-{k}"));
            let (sf, reports) = SpreadForecaster::fit(cfg.model, data, train.clone(), &hp, cfg.per_node)
                .map_err(forecast_err)?;
            let spread = sf.predict_matrix(&data.features, test.clone()).map_err(forecast_err)?;
            hp.seed = derive_seed(seed, &format!("quantity-forecast-{k}"));
            let (qf, qrep) = QuantityForecaster::fit(
                cfg.model,
                data,
                train.clone(),
                &hp,
                Some(cfg.theta_quantity),
            )
            .map_err(forecast_err)?;
            let quantity = qf.predict_vector(&data.features, test.clone()).map_err(forecast_err)?;
            let loss = reports.iter().map(|r| r.final_loss).sum::<f64>() / reports.len() as f64;
            (spread, quantity, Some(loss), Some(qrep.final_loss))
        };

        // Reference spread against [net quantity, features], non-increasing
        // in the net quantity.
        out.access.record("sensitivity fit", decision, train.start, train.end);
        let gbt_err = |source| BacktestError::Gbt { date, source };
        let (names, rows, targets) = sensitivity_training_set(data, train.clone());
        let ensemble = gbt::fit(&names, &rows, &targets, &cfg.gbt).map_err(gbt_err)?;

        for d in start..end {
            let offset = (d - start) * HOURS;
            let y_hat = &quantity[offset..offset + HOURS];
            let pwl = (0..HOURS)
                .map(|h| {
                    let t = d * HOURS + h;
                    anchored_curve(&ensemble, &data.features.frames[t].values, y_hat[h], bounds, h)
                })
                .collect::<Result<Vec<_>, GbtError>>()
                .map_err(gbt_err)?;
            out.pwl.push(pwl);
            out.spread_forecast
                .push(spread.iter().map(|s| s[offset..offset + HOURS].to_vec()).collect());
            out.quantity_forecast.push(y_hat.to_vec());
            out.bounds.push(bounds);
            out.market_collateral.push(collateral);
        }
        out.periods.push(PeriodSummary {
            start: date,
            days: end - start,
            spread_loss,
            quantity_loss,
            sensitivity_trees: ensemble.trees.len(),
        });
    }
    Ok(out)
}

struct DayOutcome {
    result: DailyResult,
    budget: f64,
    risk_limit: f64,
    shift: Vec<f64>,
    hit_node_limit: bool,
    access: AccessLog,
}

fn run_day(
    data: &MarketData,
    prepared: &PreparedBacktest,
    cfg: &BacktestConfig,
    scenario: Scenario,
    k: usize,
) -> Result<DayOutcome, BacktestError> {
    let panel = &data.panel;
    let date = prepared.dates[k];
    let day = prepared.first_test_day + k;
    let base = day * HOURS;
    let budget = match cfg.budget {
        BudgetRule::Fixed(b) => b,
        BudgetRule::Share(s) => s * prepared.market_collateral[k],
    };
    let risk_limit = cfg.risk.limit(budget);
    let bounds = prepared.bounds[k];

    let mut access = AccessLog::default();
    access.record("risk scenarios", base, base - cfg.sample_days * HOURS, base);
    let samples: Vec<Vec<Vec<f64>>> = (0..HOURS)
        .map(|h| {
            (1..=cfg.sample_days)
                .map(|back| {
                    let t = base - back * HOURS + h;
                    panel.spread.iter().map(|s| s[t]).collect()
                })
                .collect()
        })
        .collect();
    let pwl = if scenario.optimizes_with_shift() {
        prepared.pwl[k].clone()
    } else {
        (0..HOURS).map(|h| PwlSensitivity::flat(h, bounds)).collect()
    };
    let instance = PortfolioInstance {
        nodes: panel.nodes.clone(),
        expected_spread: prepared.spread_forecast[k].clone(),
        pwl,
        samples,
        costs: cfg.costs,
        budget,
        risk_limit,
        beta: cfg.beta,
        y_forecast: prepared.quantity_forecast[k].clone(),
        exclusive: cfg.exclusive,
    };
    let options = BranchAndBoundOptions {
        node_limit: cfg.node_limit,
        strategy: SearchStrategy::Auto,
    };
    let (solution, hit_node_limit) = match solve_branch_and_bound(&instance, &options) {
        Ok(s) => (s, false),
        Err(PortfolioError::NodeLimit { incumbent, .. }) => (*incumbent, true),
        Err(source) => return Err(BacktestError::Portfolio { date, source }),
    };

    let realized: Vec<Vec<f64>> = panel.spread.iter().map(|s| s[base..base + HOURS].to_vec()).collect();
    let fitted = &prepared.pwl[k];
    let mut result = settle_day(
        date,
        &panel.nodes,
        &solution.decision,
        &realized,
        fitted,
        &cfg.costs,
        scenario,
    )
    .map_err(|e| match e {
        BacktestError::Sensitivity(source) => BacktestError::Settlement { date, source },
        other => other,
    })?;
    result.cvar = solution.evaluation.total_cvar;
    let shift = (0..HOURS)
        .map(|h| match scenario {
            Scenario::NoPs => Ok(0.0),
            _ => fitted[h].shift_at(solution.decision.net_position(h) as f64),
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|source| BacktestError::Settlement { date, source })?;
    Ok(DayOutcome {
        result,
        budget,
        risk_limit,
        shift,
        hit_node_limit,
        access,
    })
}

/// Solves and settles every test day under `scenario`. Days are spread over
/// `cfg.workers` threads and collected in date order.
pub fn simulate(
    data: &MarketData,
    prepared: &PreparedBacktest,
    cfg: &BacktestConfig,
    scenario: Scenario,
) -> Result<BacktestReport, BacktestError> {
    cfg.validate()?;
    let n = prepared.num_days();
    let workers = cfg.workers.min(n.max(1));
    let mut slots: Vec<Option<Result<DayOutcome, BacktestError>>> = (0..n).map(|_| None).collect();
    if workers <= 1 {
        for (k, slot) in slots.iter_mut().enumerate() {
            *slot = Some(run_day(data, prepared, cfg, scenario, k));
        }
    } else {
        let chunk = n.div_ceil(workers);
        std::thread::scope(|scope| {
            for (c, part) in slots.chunks_mut(chunk).enumerate() {
                scope.spawn(move || {
                    for (j, slot) in part.iter_mut().enumerate() {
                        *slot = Some(run_day(data, prepared, cfg, scenario, c * chunk + j));
                    }
                });
            }
        });
    }

    let mut access = prepared.access.clone();
    let mut days = Vec::with_capacity(n);
    let mut budgets = Vec::with_capacity(n);
    let mut risk_limits = Vec::with_capacity(n);
    let mut applied_shift = Vec::with_capacity(n);
    let mut node_limit_days = 0;
    for slot in slots {
        let o = slot.expect("every day is run")?;
        days.push(o.result);
        budgets.push(o.budget);
        risk_limits.push(o.risk_limit);
        applied_shift.push(o.shift);
        node_limit_days += usize::from(o.hit_node_limit);
        access.extend(o.access);
    }

    let mut running = 0.0;
    let cumulative_net = days
        .iter()
        .map(|d| {
            running += d.net;
            running
        })
        .collect();
    let realized: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|k| {
            let base = (prepared.first_test_day + k) * HOURS;
            data.panel.spread.iter().map(|s| s[base..base + HOURS].to_vec()).collect()
        })
        .collect();
    let mut forecasts = Vec::new();
    let mut actuals = Vec::new();
    for (f, r) in prepared.spread_forecast.iter().zip(&realized) {
        for (fi, ri) in f.iter().zip(r) {
            forecasts.extend_from_slice(fi);
            actuals.extend_from_slice(ri);
        }
    }

    let mut report = BacktestReport {
        scenario,
        seed: prepared.seed,
        convergence: convergence_report(&days, &realized, &applied_shift),
        sharpe_by_year: sharpe_by_year(&days, &budgets, cfg.risk_free_rate),
        spike: spike_metrics(&forecasts, &actuals).ok(),
        days,
        budgets,
        risk_limits,
        cumulative_net,
        applied_shift,
        profit_per_dollar: 0.0,
        node_limit_days,
        firewall_violations: access.violations(&data.panel.hours),
        periods: prepared.periods.clone(),
        efficiency: Vec::new(),
    };
    report.profit_per_dollar =
        profit_per_dollar(report.total_net(), report.mean_budget(), report.mean_risk_limit());
    Ok(report)
}

/// Re-runs the daily loop once per share in `cfg.shares` on the same
/// forecasts.
pub fn efficiency_sweep(
    data: &MarketData,
    prepared: &PreparedBacktest,
    cfg: &BacktestConfig,
    scenario: Scenario,
) -> Result<Vec<EfficiencyPoint>, BacktestError> {
    cfg.shares
        .iter()
        .map(|&share| {
            let run_cfg = BacktestConfig {
                budget: BudgetRule::Share(share),
                ..cfg.clone()
            };
            let r = simulate(data, prepared, &run_cfg, scenario)?;
            let returns = daily_returns(&r.days, &r.budgets);
            Ok(EfficiencyPoint {
                share,
                total_net: r.total_net(),
                profit_per_dollar: r.profit_per_dollar,
                sharpe: sharpe_ratio(&returns, cfg.risk_free_rate / TRADING_DAYS_PER_YEAR).ok(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate_synthetic_market, SyntheticConfig};
    use crate::neural::NnHyperparams;

    fn market(days: usize, seed: u64) -> MarketData {
        let cfg = SyntheticConfig {
            nodes: 3,
            days,
            ..SyntheticConfig::default()
        };
        generate_synthetic_market(&cfg, seed).unwrap().data
    }

    fn quick(train_days: usize) -> BacktestConfig {
        let mut cfg = BacktestConfig {
            train_days,
            sample_days: 10,
            ..BacktestConfig::default()
        };
        cfg.nn = NnHyperparams {
            hidden_units: vec![8],
            epochs: 3,
            batch_size: 256,
            learning_rate: 0.01,
            ..cfg.nn
        };
        cfg.gbt.num_rounds = 10;
        cfg.gbt.max_depth = 3;
        cfg
    }

    #[test]
    fn periods_follow_calendar_months() {
        let d0 = NaiveDate::from_ymd_opt(2021, 1, 20).unwrap();
        let dates: Vec<NaiveDate> = (0..60).map(|k| d0 + chrono::Duration::days(k)).collect();
        let p = periods(&dates, 0, 1);
        assert_eq!(p.len(), 3);
        assert_eq!(dates[p[1].0], NaiveDate::from_ymd_opt(2021, 2, 1).unwrap());
        assert_eq!(dates[p[2].0], NaiveDate::from_ymd_opt(2021, 3, 1).unwrap());
        assert_eq!(p[2].1, 60);
        assert_eq!(periods(&dates, 0, 2).len(), 2);
    }

    #[test]
    fn insufficient_history() {
        let data = market(14, 1);
        assert!(matches!(
            prepare(&data, &BacktestConfig::default(), 0),
            Err(BacktestError::InsufficientHistory { available_days: 14, .. })
        ));
    }

    #[test]
    fn cheat_mode_is_profitable_and_flagged() {
        let data = market(100, 2);
        let cfg = BacktestConfig {
            cheat: true,
            scenario: Scenario::NoPs,
            ..quick(60)
        };
        let report = super::super::run_backtest(&data, &cfg, 3).unwrap();
        assert_eq!(report.days.len(), 40);
        assert!(report.total_net() > 0.0, "{}", report.total_net());
        assert!(!report.firewall_violations.is_empty());
        let spike = report.spike.unwrap();
        assert_eq!(spike.accuracy, 1.0);
        assert_eq!(spike.rmse, 0.0);
    }

    #[test]
    fn forecasting_run_has_clean_firewall_and_is_deterministic() {
        let data = market(90, 4);
        let cfg = quick(60);
        let a = prepare(&data, &cfg, 5).unwrap();
        assert!(a.access.violations(&data.panel.hours).is_empty());
        assert_eq!(a.periods.len(), 1);
        for pwl in a.pwl.iter().flatten() {
            assert!(pwl.validate().is_empty(), "{:?}", pwl.validate());
            assert_eq!(pwl.shift_at(0.0).unwrap(), 0.0);
        }
        let b = prepare(&data, &cfg, 5).unwrap();
        assert_eq!(a, b);
        let ra = simulate(&data, &a, &cfg, Scenario::FullPs).unwrap();
        assert!(ra.firewall_violations.is_empty(), "{:?}", ra.firewall_violations);
        let par = simulate(&data, &a, &BacktestConfig { workers: 3, ..cfg.clone() }, Scenario::FullPs).unwrap();
        assert_eq!(ra, par);
    }

    #[test]
    fn no_and_partial_share_decisions() {
        let data = market(80, 6);
        let cfg = BacktestConfig { cheat: true, ..quick(50) };
        let p = prepare(&data, &cfg, 1).unwrap();
        let no = simulate(&data, &p, &cfg, Scenario::NoPs).unwrap();
        let partial = simulate(&data, &p, &cfg, Scenario::PartialPs).unwrap();
        let bids = |r: &BacktestReport| -> Vec<Vec<(String, usize)>> {
            r.days
                .iter()
                .map(|d| d.ledger.iter().map(|e| (e.node.clone(), e.hour)).collect())
                .collect()
        };
        assert_eq!(bids(&no), bids(&partial));
        assert!(no.applied_shift.iter().flatten().all(|s| *s == 0.0));
    }

    #[test]
    fn zero_budget_gives_flat_zero_pnl() {
        let data = market(80, 7);
        let cfg = BacktestConfig {
            cheat: true,
            budget: BudgetRule::Fixed(0.0),
            ..quick(50)
        };
        let report = super::super::run_backtest(&data, &cfg, 1).unwrap();
        assert!(report.cumulative_net.iter().all(|v| *v == 0.0));
        assert!(report.days.iter().all(|d| d.ledger.is_empty()));
        assert!(report.convergence.iter().all(|r| r.with_bidding == r.without_bidding));
    }

    #[test]
    fn identical_budgets_give_identical_sweep_points() {
        let data = market(80, 8);
        let cfg = BacktestConfig {
            cheat: true,
            shares: vec![0.05, 0.05, 0.01],
            ..quick(50)
        };
        let p = prepare(&data, &cfg, 1).unwrap();
        let pts = efficiency_sweep(&data, &p, &cfg, Scenario::FullPs).unwrap();
        assert_eq!(pts[0], pts[1]);
        assert_ne!(pts[0].total_net, pts[2].total_net);
    }

    #[test]
    fn rejects_partial_days() {
        let mut data = market(80, 9);
        data.panel.hours.pop();
        assert!(matches!(
            prepare(&data, &quick(50), 1),
            Err(BacktestError::InvalidData(_))
        ));
    }
}
