//! Risk-constrained virtual-bid portfolio: one-lot INC/DEC decisions per
//! node-hour, a collateral budget, a sum-of-hourly-CVaR limit, and the
//! trader's own price impact through the hourly piecewise-linear shift.

mod bnb;
mod cvar;
mod enumerate;
mod hourly;
mod problem;

use thiserror::Error;

use crate::market::CostSchedule;
use crate::sensitivity::{PwlSensitivity, SensitivityError};

pub use bnb::{solve_branch_and_bound, BranchAndBoundOptions, SearchStrategy};
pub use cvar::{empirical_cvar, f_beta, min_f_beta, tail_weights, TailRisk};
pub use enumerate::{solve_enumeration, solve_enumeration_parallel, MAX_ENUMERATION_BINARIES};
pub use problem::{
    build_problem, Constraint, LinearExpr, MiqcpProblem, Sense, SlackCheck, VarKind, Variable,
};

pub const DEFAULT_BETA: f64 = 0.95;
/// Absolute slack allowed on the budget and risk limits.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("loss sample is empty")]
    EmptyLosses,
    #[error("confidence level {0} must lie in (0, 1)")]
    InvalidBeta(f64),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid sensitivity model: {0}")]
    InvalidPwl(String),
    #[error("bounds of hour {hour} exclude a zero position")]
    InfeasibleBounds { hour: usize },
    #[error("{count} binaries exceed the enumeration limit of {limit}")]
    TooManyBinaries { count: usize, limit: usize },
    #[error("no feasible portfolio, not even the empty one")]
    Infeasible,
    #[error("node limit {limit} reached; incumbent objective {}, gap {gap}", incumbent.objective)]
    NodeLimit {
        limit: u64,
        gap: f64,
        incumbent: Box<SolutionReport>,
    },
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Inc,
    Dec,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Inc => "inc",
            Side::Dec => "dec",
        }
    }
}

/// Net profit of one cleared lot at `spread` (DA minus RT).
pub fn expected_bid_profit(spread: f64, side: Side, costs: &CostSchedule) -> f64 {
    match side {
        Side::Inc => spread - costs.gamma_inc,
        Side::Dec => -spread - costs.gamma_dec,
    }
}

/// One operating day (or any set of hours) to optimize.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioInstance {
    pub nodes: Vec<String>,
    /// `[node][hour]` point forecast of the spread, $/MWh.
    pub expected_spread: Vec<Vec<f64>>,
    /// One sensitivity model per hour.
    pub pwl: Vec<PwlSensitivity>,
    /// `[hour][sample][node]` historical spread scenarios.
    pub samples: Vec<Vec<Vec<f64>>>,
    pub costs: CostSchedule,
    pub budget: f64,
    /// May be infinite.
    pub risk_limit: f64,
    pub beta: f64,
    /// Forecast market net quantity per hour, MWh (context only).
    pub y_forecast: Vec<f64>,
    /// Forbid INC and DEC at the same node-hour.
    pub exclusive: bool,
}

impl PortfolioInstance {
    pub fn num_nodes(&self) -> usize {
        self.expected_spread.len()
    }

    pub fn num_hours(&self) -> usize {
        self.pwl.len()
    }

    pub fn num_binaries(&self) -> usize {
        2 * self.num_nodes() * self.num_hours()
    }

    pub fn validate(&self) -> Result<(), PortfolioError> {
        let bad = |m: String| Err(PortfolioError::InvalidInstance(m));
        let n = self.num_nodes();
        let h = self.num_hours();
        if n == 0 || h == 0 {
            return bad("instance needs at least one node and one hour".into());
        }
        if self.nodes.len() != n {
            return bad(format!("{} node names for {n} nodes", self.nodes.len()));
        }
        if self.expected_spread.iter().any(|r| r.len() != h) {
            return bad("expected spread rows must cover every hour".into());
        }
        if self
            .expected_spread
            .iter()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return bad("expected spreads must be finite".into());
        }
        if self.samples.len() != h {
            return bad(format!("{} sample sets for {h} hours", self.samples.len()));
        }
        for (hh, s) in self.samples.iter().enumerate() {
            if s.is_empty() {
                return bad(format!("hour {hh} has no spread samples"));
            }
            if s.iter().any(|v| v.len() != n || v.iter().any(|x| !x.is_finite())) {
                return bad(format!("hour {hh} has a malformed spread sample"));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(PortfolioError::InvalidBeta(self.beta));
        }
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return bad(format!("budget {} must be finite and >= 0", self.budget));
        }
        if self.risk_limit.is_nan() || self.risk_limit < 0.0 {
            return bad(format!("risk limit {} must be >= 0", self.risk_limit));
        }
        self.costs
            .validate()
            .map_err(|e| PortfolioError::InvalidInstance(e.to_string()))?;
        for (hh, p) in self.pwl.iter().enumerate() {
            if !(p.x_lo <= 0.0 && 0.0 <= p.x_hi) {
                return Err(PortfolioError::InfeasibleBounds { hour: hh });
            }
            let v = p.validate();
            if !v.is_empty() {
                return Err(PortfolioError::InvalidPwl(format!(
                    "hour {hh}: {}",
                    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
                )));
            }
        }
        if !self.y_forecast.is_empty() && self.y_forecast.len() != h {
            return bad("y_forecast must be empty or cover every hour".into());
        }
        Ok(())
    }

    pub fn lot_value(&self, node: usize, hour: usize, side: Side) -> f64 {
        expected_bid_profit(self.expected_spread[node][hour], side, &self.costs)
    }

    /// Loss of one lot in a spread scenario (negative profit).
    pub fn lot_loss(&self, spread: f64, side: Side) -> f64 {
        -expected_bid_profit(spread, side, &self.costs)
    }

    pub fn collateral(&self, side: Side) -> f64 {
        match side {
            Side::Inc => self.costs.prox_inc,
            Side::Dec => self.costs.prox_dec,
        }
    }

    /// `x * shift(x)`, the sensitivity term of the objective.
    pub fn sensitivity_term(&self, hour: usize, x: f64) -> Result<f64, PortfolioError> {
        Ok(x * self.pwl[hour].shift_at(x)?)
    }
}

/// Binary INC/DEC decisions, `[node][hour]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortfolioDecision {
    pub inc: Vec<Vec<bool>>,
    pub dec: Vec<Vec<bool>>,
}

impl PortfolioDecision {
    pub fn empty(nodes: usize, hours: usize) -> Self {
        Self {
            inc: vec![vec![false; hours]; nodes],
            dec: vec![vec![false; hours]; nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.inc.len()
    }

    pub fn num_hours(&self) -> usize {
        self.inc.first().map_or(0, Vec::len)
    }

    /// INC lots minus DEC lots in `hour`.
    pub fn net_position(&self, hour: usize) -> i64 {
        let inc = self.inc.iter().filter(|r| r[hour]).count() as i64;
        let dec = self.dec.iter().filter(|r| r[hour]).count() as i64;
        inc - dec
    }

    pub fn num_bids(&self) -> usize {
        self.inc.iter().chain(&self.dec).flatten().filter(|b| **b).count()
    }

    /// `z_inc` then `z_dec`, node-major, as 0/1.
    pub fn flat(&self) -> Vec<u8> {
        self.inc
            .iter()
            .chain(&self.dec)
            .flat_map(|r| r.iter().map(|b| u8::from(*b)))
            .collect()
    }

    pub fn bids(&self) -> Vec<(usize, usize, Side)> {
        let mut out = Vec::new();
        for h in 0..self.num_hours() {
            for i in 0..self.num_nodes() {
                if self.inc[i][h] {
                    out.push((h, i, Side::Inc));
                }
                if self.dec[i][h] {
                    out.push((h, i, Side::Dec));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HourEvaluation {
    pub x: i64,
    /// Active sensitivity segment, `None` when `x` is out of bounds.
    pub segment: Option<usize>,
    pub linear: f64,
    pub sensitivity: f64,
    pub collateral: f64,
    pub losses: Vec<f64>,
    pub var: f64,
    pub cvar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub hours: Vec<HourEvaluation>,
    pub objective: f64,
    pub collateral: f64,
    pub total_cvar: f64,
    pub within_bounds: bool,
    pub within_budget: bool,
    pub within_risk: bool,
}

impl Evaluation {
    pub fn feasible(&self) -> bool {
        self.within_bounds && self.within_budget && self.within_risk
    }
}

/// Sample losses of `hour` under `decision`.
pub fn hour_losses(instance: &PortfolioInstance, decision: &PortfolioDecision, hour: usize) -> Vec<f64> {
    instance.samples[hour]
        .iter()
        .map(|s| {
            (0..instance.num_nodes())
                .map(|i| {
                    let mut l = 0.0;
                    if decision.inc[i][hour] {
                        l += instance.lot_loss(s[i], Side::Inc);
                    }
                    if decision.dec[i][hour] {
                        l += instance.lot_loss(s[i], Side::Dec);
                    }
                    l
                })
                .sum()
        })
        .collect()
}

/// Objective, collateral and hourly risk of a decision; the slack variables
/// of the relaxed program are at their optimal values, so the objective is
/// the linear profit plus `x * shift(x)` per hour.
pub fn evaluate(instance: &PortfolioInstance, decision: &PortfolioDecision) -> Evaluation {
    let mut hours = Vec::with_capacity(instance.num_hours());
    let mut within_bounds = true;
    for h in 0..instance.num_hours() {
        let mut linear = 0.0;
        let mut collateral = 0.0;
        for i in 0..instance.num_nodes() {
            if decision.inc[i][h] {
                linear += instance.lot_value(i, h, Side::Inc);
                collateral += instance.costs.prox_inc;
            }
            if decision.dec[i][h] {
                linear += instance.lot_value(i, h, Side::Dec);
                collateral += instance.costs.prox_dec;
            }
        }
        let x = decision.net_position(h);
        let pwl = &instance.pwl[h];
        let (segment, sensitivity) = match pwl.active_segment(x as f64) {
            Ok(j) => (Some(j), pwl.segments[j].value(x as f64) * x as f64),
            Err(_) => {
                within_bounds = false;
                (None, f64::NEG_INFINITY)
            }
        };
        let losses = hour_losses(instance, decision, h);
        let risk = empirical_cvar(&losses, instance.beta).expect("validated samples");
        hours.push(HourEvaluation {
            x,
            segment,
            linear,
            sensitivity,
            collateral,
            losses,
            var: risk.var,
            cvar: risk.cvar,
        });
    }
    let objective = hours.iter().map(|h| h.linear + h.sensitivity).sum();
    let collateral = hours.iter().map(|h| h.collateral).sum();
    let total_cvar = hours.iter().map(|h| h.cvar).sum();
    Evaluation {
        within_budget: collateral <= instance.budget + FEASIBILITY_TOL,
        within_risk: total_cvar <= instance.risk_limit + FEASIBILITY_TOL,
        within_bounds,
        hours,
        objective,
        collateral,
        total_cvar,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverStats {
    pub solver: &'static str,
    pub nodes: u64,
    /// Upper bound minus objective; 0 when proven optimal.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionReport {
    pub objective: f64,
    pub decision: PortfolioDecision,
    pub evaluation: Evaluation,
    pub budget_binding: bool,
    pub risk_binding: bool,
    pub stats: SolverStats,
}

impl SolutionReport {
    pub(crate) fn new(
        instance: &PortfolioInstance,
        decision: PortfolioDecision,
        stats: SolverStats,
    ) -> Self {
        let evaluation = evaluate(instance, &decision);
        let min_lot = instance.costs.prox_inc.min(instance.costs.prox_dec);
        let budget_binding = instance.budget - evaluation.collateral < min_lot.max(FEASIBILITY_TOL);
        let risk_binding = instance.risk_limit.is_finite()
            && instance.risk_limit - evaluation.total_cvar <= 1e-6 * instance.risk_limit.abs().max(1.0);
        Self {
            objective: evaluation.objective,
            decision,
            evaluation,
            budget_binding,
            risk_binding,
            stats,
        }
    }
}

/// Recomputes the summed hourly CVaR of `decision` by minimizing the
/// sampled CVaR objective over alpha, independently of the solvers.
pub fn realized_cvar_check(
    instance: &PortfolioInstance,
    decision: &PortfolioDecision,
) -> Result<(bool, f64), PortfolioError> {
    let mut total = 0.0;
    for h in 0..instance.num_hours() {
        let losses = hour_losses(instance, decision, h);
        total += min_f_beta(&losses, instance.beta)?.1;
    }
    Ok((total <= instance.risk_limit + 1e-6, total))
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn lot_profits() {
        let c = CostSchedule::new(1.0, 0.5, 0.0, 0.0).unwrap();
        assert_eq!(expected_bid_profit(6.37, Side::Inc, &c), 6.37 - 1.0);
        assert!((expected_bid_profit(6.37, Side::Inc, &c) - 5.37).abs() < 1e-12);
        assert_eq!(expected_bid_profit(-3.0, Side::Dec, &c), 2.5);
        let z = CostSchedule::new(0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(expected_bid_profit(0.0, Side::Inc, &z), 0.0);
        assert_eq!(expected_bid_profit(0.0, Side::Dec, &z), 0.0);
    }

    #[test]
    fn evaluate_single_inc() {
        let inst = instance(
            vec![vec![10.0]],
            vec![PwlSensitivity::linear(0, -0.5, crate::sensitivity::SensitivityBounds::new(-5.0, 5.0).unwrap()).unwrap()],
            CostSchedule::new(1.0, 1.0, 2.0, 2.0).unwrap(),
        );
        let mut d = PortfolioDecision::empty(1, 1);
        d.inc[0][0] = true;
        let e = evaluate(&inst, &d);
        assert_eq!(e.hours[0].x, 1);
        assert_eq!(e.objective, 9.0 - 0.5);
        assert_eq!(e.collateral, 2.0);
        // one sample at spread 10: loss -(10 - 1)
        assert_eq!(e.total_cvar, -9.0);
        assert!(e.feasible());
    }

    #[test]
    fn empty_portfolio_has_zero_risk() {
        let inst = instance(vec![vec![3.0, -4.0]], vec![flat_pwl(0), flat_pwl(1)], CostSchedule::default());
        let d = PortfolioDecision::empty(1, 2);
        let (pass, v) = realized_cvar_check(&inst, &d).unwrap();
        assert!(pass);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn risk_check_negative_control() {
        let mut inst = instance(vec![vec![1.0]], vec![flat_pwl(0)], CostSchedule::default());
        inst.samples = vec![vec![vec![-30.0], vec![5.0], vec![2.0]]];
        inst.risk_limit = 10.0;
        let mut d = PortfolioDecision::empty(1, 1);
        d.inc[0][0] = true;
        let (pass, v) = realized_cvar_check(&inst, &d).unwrap();
        assert!(!pass);
        assert!((v - 30.0).abs() < 1e-9);
    }

    #[test]
    fn validation_catches_bad_instances() {
        let base = instance(vec![vec![1.0]], vec![flat_pwl(0)], CostSchedule::default());
        assert!(base.validate().is_ok());
        let mut b = base.clone();
        b.beta = 1.0;
        assert!(matches!(b.validate(), Err(PortfolioError::InvalidBeta(_))));
        let mut b = base.clone();
        b.samples[0].clear();
        assert!(b.validate().is_err());
        let mut b = base.clone();
        b.pwl[0].segments[0].slope = 0.3;
        assert!(matches!(b.validate(), Err(PortfolioError::InvalidPwl(_))));
        let mut b = base;
        b.pwl[0].x_lo = 1.0;
        assert!(matches!(b.validate(), Err(PortfolioError::InfeasibleBounds { .. })));
    }
}
