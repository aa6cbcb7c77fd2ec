//! Realized settlement of one day's portfolio.

use chrono::NaiveDate;

use super::{BacktestError, Scenario};
use crate::market::CostSchedule;
use crate::portfolio::{PortfolioDecision, Side};
use crate::sensitivity::PwlSensitivity;

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub node: String,
    /// Hour of day, 0-based.
    pub hour: usize,
    pub side: Side,
    pub realized_spread: f64,
    /// Spread shift from the trader's own net position in that hour.
    pub shift: f64,
    pub gross: f64,
    pub fees: f64,
    pub net: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyResult {
    pub date: NaiveDate,
    pub gross: f64,
    pub fees: f64,
    pub net: f64,
    pub collateral: f64,
    /// Summed hourly CVaR of the portfolio on the day's scenarios.
    pub cvar: f64,
    pub ledger: Vec<LedgerEntry>,
}

impl DailyResult {
    pub fn empty(date: NaiveDate) -> Self {
        Self {
            date,
            gross: 0.0,
            fees: 0.0,
            net: 0.0,
            collateral: 0.0,
            cvar: 0.0,
            ledger: Vec::new(),
        }
    }
}

/// Settles `decision` against `realized[node][hour]`. Every node in an hour
/// sees the same shift `pwl[hour].shift_at(x)`, except under
/// [`Scenario::NoPs`] where the shift is zero. Totals are sums of the ledger.
pub fn settle_day(
    date: NaiveDate,
    nodes: &[String],
    decision: &PortfolioDecision,
    realized: &[Vec<f64>],
    pwl: &[PwlSensitivity],
    costs: &CostSchedule,
    scenario: Scenario,
) -> Result<DailyResult, BacktestError> {
    let hours = decision.num_hours();
    if realized.len() != nodes.len()
        || decision.num_nodes() != nodes.len()
        || realized.iter().any(|r| r.len() != hours)
        || pwl.len() != hours
    {
        return Err(BacktestError::InvalidData(format!(
            "settlement inputs for {date} disagree in shape"
        )));
    }
    let mut day = DailyResult::empty(date);
    for h in 0..hours {
        let x = decision.net_position(h) as f64;
        let shift = match scenario {
            Scenario::NoPs => 0.0,
            Scenario::PartialPs | Scenario::FullPs => pwl[h].shift_at(x)?,
        };
        for (i, node) in nodes.iter().enumerate() {
            let sides = [
                (decision.inc[i][h], Side::Inc, costs.gamma_inc, costs.prox_inc, 1.0),
                (decision.dec[i][h], Side::Dec, costs.gamma_dec, costs.prox_dec, -1.0),
            ];
            for (on, side, fee, prox, sign) in sides {
                if !on {
                    continue;
                }
                let gross = sign * (realized[i][h] + shift);
                let net = gross - fee;
                day.gross += gross;
                day.fees += fee;
                day.net += net;
                day.collateral += prox;
                day.ledger.push(LedgerEntry {
                    node: node.clone(),
                    hour: h,
                    side,
                    realized_spread: realized[i][h],
                    shift,
                    gross,
                    fees: fee,
                    net,
                });
            }
        }
    }
    Ok(day)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::SensitivityBounds;

    fn date() -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 3, 1).unwrap()
    }

    fn bounds() -> SensitivityBounds {
        SensitivityBounds::new(-10.0, 10.0).unwrap()
    }

    #[test]
    fn single_inc_with_shift() {
        let mut d = PortfolioDecision::empty(1, 1);
        d.inc[0][0] = true;
        let pwl = vec![PwlSensitivity::linear(0, -2.0, bounds()).unwrap()];
        let costs = CostSchedule::new(1.0, 1.0, 5.0, 5.0).unwrap();
        let r = settle_day(date(), &["A".into()], &d, &[vec![10.0]], &pwl, &costs, Scenario::FullPs)
            .unwrap();
        assert_eq!(r.net, 7.0);
        assert_eq!(r.gross, 8.0);
        assert_eq!(r.collateral, 5.0);
        assert_eq!(r.ledger.len(), 1);
        assert_eq!(r.ledger[0].shift, -2.0);
        let no = settle_day(date(), &["A".into()], &d, &[vec![10.0]], &pwl, &costs, Scenario::NoPs)
            .unwrap();
        assert_eq!(no.net, 9.0);
    }

    #[test]
    fn no_positions_settle_to_zero() {
        let d = PortfolioDecision::empty(2, 3);
        let pwl = vec![PwlSensitivity::linear(0, -2.0, bounds()).unwrap(); 3];
        let r = settle_day(
            date(),
            &["A".into(), "B".into()],
            &d,
            &[vec![5.0; 3], vec![-5.0; 3]],
            &pwl,
            &CostSchedule::new(1.0, 1.0, 1.0, 1.0).unwrap(),
            Scenario::FullPs,
        )
        .unwrap();
        assert_eq!(r, DailyResult::empty(date()));
    }

    #[test]
    fn offsetting_bids_see_no_shift() {
        let mut d = PortfolioDecision::empty(2, 1);
        d.inc[0][0] = true;
        d.dec[1][0] = true;
        let pwl = vec![PwlSensitivity::linear(0, -3.0, bounds()).unwrap()];
        let costs = CostSchedule::new(0.5, 0.25, 1.0, 1.0).unwrap();
        let r = settle_day(
            date(),
            &["A".into(), "B".into()],
            &d,
            &[vec![4.0], vec![-2.0]],
            &pwl,
            &costs,
            Scenario::PartialPs,
        )
        .unwrap();
        assert!(r.ledger.iter().all(|e| e.shift == 0.0));
        assert_eq!(r.net, (4.0 - 0.5) + (2.0 - 0.25));
        let sum: f64 = r.ledger.iter().map(|e| e.net).sum();
        assert_eq!(sum, r.net);
        assert_eq!(r.gross - r.fees, r.net);
    }

    #[test]
    fn position_outside_domain_is_rejected() {
        let mut d = PortfolioDecision::empty(3, 1);
        for i in 0..3 {
            d.inc[i][0] = true;
        }
        let pwl = vec![PwlSensitivity::linear(0, -1.0, SensitivityBounds::new(-2.0, 2.0).unwrap()).unwrap()];
        let r = settle_day(
            date(),
            &["A".into(), "B".into(), "C".into()],
            &d,
            &[vec![1.0], vec![1.0], vec![1.0]],
            &pwl,
            &CostSchedule::default(),
            Scenario::FullPs,
        );
        assert!(matches!(r, Err(BacktestError::Sensitivity(_))));
    }
}
