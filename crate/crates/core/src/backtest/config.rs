//! Backtest settings and their `key = value` form.

use super::{BacktestError, Scenario};
use crate::config::KeyValues;
use crate::gbt::GbtParams;
use crate::market::CostSchedule;
use crate::neural::{MarketPreset, ModelKind, NnHyperparams};
use crate::portfolio::DEFAULT_BETA;

/// Every recognized key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("train_days", "training window in days before each retrain (default 365)"),
    ("retrain_months", "calendar months between retrains (default 1)"),
    ("scenario", "no-ps | partial-ps | full-ps (default full-ps)"),
    ("model", "forecaster network: mlp | lstm (default mlp)"),
    ("nn_preset", "architecture preset: pjm | isone | caiso (default pjm)"),
    ("nn_hidden", "comma-separated hidden widths, overrides the preset"),
    ("nn_dropout", "dropout rate"),
    ("nn_learning_rate", "Adam learning rate"),
    ("nn_batch_size", "minibatch size"),
    ("nn_epochs", "maximum training epochs"),
    ("nn_lookback", "LSTM input window in hours"),
    ("nn_patience", "early-stopping patience in epochs"),
    ("nn_validation_fraction", "trailing fraction of samples held out for early stopping"),
    ("per_node", "one spread network per node instead of a shared one (default false)"),
    ("theta_quantity", "sigmoid scale of the net virtual quantity target, MWh (default 50)"),
    ("gbt_rounds", "boosting rounds of the sensitivity model (default 100)"),
    ("gbt_depth", "maximum tree depth (default 4)"),
    ("gbt_lambda", "L2 penalty on leaf weights (default 1)"),
    ("gbt_gamma", "minimum split gain (default 0)"),
    ("gbt_learning_rate", "shrinkage (default 0.1)"),
    ("gamma_inc", "fee per INC lot, $/MWh (default 0.5)"),
    ("gamma_dec", "fee per DEC lot, $/MWh (default 0.5)"),
    ("prox_inc", "collateral per INC lot, $/MWh (default 10)"),
    ("prox_dec", "collateral per DEC lot, $/MWh (default 10)"),
    ("budget", "fixed daily collateral budget in $; excludes `share`"),
    ("share", "market share setting the daily budget (default 0.05)"),
    ("risk_limit", "same | half | none | <$ amount> (default same)"),
    ("shares", "comma-separated market shares for the efficiency sweep"),
    ("beta", "CVaR confidence level (default 0.95)"),
    ("sample_days", "previous days supplying the CVaR scenarios (default 30)"),
    ("exclusive", "forbid INC and DEC at one node-hour (default true)"),
    ("node_limit", "branch-and-bound node limit per day (default 2000000)"),
    ("risk_free_rate", "annual risk-free rate for the Sharpe ratio (default 0)"),
    ("cheat", "use realized spreads and quantities as forecasts (default false)"),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetRule {
    /// Constant daily budget in $.
    Fixed(f64),
    /// Fraction of the trailing-year average daily market-wide virtual
    /// collateral.
    Share(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RiskRule {
    SameAsBudget,
    HalfBudget,
    Unlimited,
    Fixed(f64),
}

impl RiskRule {
    pub fn limit(self, budget: f64) -> f64 {
        match self {
            RiskRule::SameAsBudget => budget,
            RiskRule::HalfBudget => 0.5 * budget,
            RiskRule::Unlimited => f64::INFINITY,
            RiskRule::Fixed(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub train_days: usize,
    pub retrain_months: u32,
    pub scenario: Scenario,
    pub model: ModelKind,
    pub per_node: bool,
    /// Used for both forecasters; the seed is replaced per period.
    pub nn: NnHyperparams,
    pub theta_quantity: f64,
    /// The constrained feature is always the net quantity column.
    pub gbt: GbtParams,
    pub costs: CostSchedule,
    pub budget: BudgetRule,
    pub risk: RiskRule,
    pub shares: Vec<f64>,
    pub beta: f64,
    pub sample_days: usize,
    pub exclusive: bool,
    pub node_limit: u64,
    pub risk_free_rate: f64,
    pub cheat: bool,
    /// Day-level parallelism; results do not depend on it.
    pub workers: usize,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            train_days: 365,
            retrain_months: 1,
            scenario: Scenario::FullPs,
            model: ModelKind::Mlp,
            per_node: false,
            nn: NnHyperparams::default(),
            theta_quantity: 50.0,
            gbt: GbtParams {
                monotone_feature: Some(0),
                ..GbtParams::default()
            },
            costs: CostSchedule {
                gamma_inc: 0.5,
                gamma_dec: 0.5,
                prox_inc: 10.0,
                prox_dec: 10.0,
            },
            budget: BudgetRule::Share(0.05),
            risk: RiskRule::SameAsBudget,
            shares: Vec::new(),
            beta: DEFAULT_BETA,
            sample_days: 30,
            exclusive: true,
            node_limit: 2_000_000,
            risk_free_rate: 0.0,
            cheat: false,
            workers: 1,
        }
    }
}

fn invalid(msg: impl Into<String>) -> BacktestError {
    BacktestError::InvalidConfig(msg.into())
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.retrain_months == 0 {
            return Err(invalid("retrain_months must be at least 1"));
        }
        // A calendar month has at least 28 days.
        if self.train_days < 28 * self.retrain_months as usize {
            return Err(invalid("train_days must cover at least one retrain cadence"));
        }
        if self.sample_days == 0 || self.sample_days > self.train_days {
            return Err(invalid("sample_days must lie in [1, train_days]"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid("beta must lie in (0, 1)"));
        }
        if !(self.theta_quantity.is_finite() && self.theta_quantity > 0.0) {
            return Err(invalid("theta_quantity must be positive"));
        }
        if self.gbt.monotone_feature != Some(0) {
            return Err(invalid("the sensitivity model must be constrained in feature 0"));
        }
        match self.budget {
            BudgetRule::Fixed(b) if !(b.is_finite() && b >= 0.0) => {
                return Err(invalid("budget must be finite and non-negative"))
            }
            BudgetRule::Share(s) if !(s > 0.0 && s <= 0.2) => {
                return Err(invalid("share must lie in (0, 0.2]"))
            }
            _ => {}
        }
        if let RiskRule::Fixed(c) = self.risk {
            if c.is_nan() || c < 0.0 {
                return Err(invalid("risk_limit must be non-negative"));
            }
        }
        if let Some(s) = self.shares.iter().find(|s| !(**s > 0.0 && **s <= 0.2)) {
            return Err(invalid(format!("sweep share {s} outside (0, 0.2]")));
        }
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        self.costs.validate()?;
        self.nn
            .validate()
            .map_err(|e| invalid(format!("network settings: {e}")))?;
        Ok(())
    }

    /// Reads the keys listed in [`CONFIG_KEYS`]; anything else is an error.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, BacktestError> {
        let known: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        kv.check_known(&known)?;
        let mut cfg = Self::default();
        let parse_with = |key: &str| -> Option<&str> { kv.get_str(key) };

        if let Some(v) = kv.get("train_days")? {
            cfg.train_days = v;
        }
        if let Some(v) = kv.get("retrain_months")? {
            cfg.retrain_months = v;
        }
        if let Some(s) = parse_with("scenario") {
            cfg.scenario = s.parse()?;
        }
        if let Some(s) = parse_with("model") {
            cfg.model = s.parse().map_err(|e| invalid(format!("{e}")))?;
        }
        let preset: MarketPreset = match parse_with("nn_preset") {
            Some(s) => s.parse().map_err(|e| invalid(format!("{e}")))?,
            None => MarketPreset::Pjm,
        };
        cfg.nn = NnHyperparams::preset(preset, cfg.model);
        if let Some(v) = kv.get_list("nn_hidden")? {
            cfg.nn.hidden_units = v;
        }
        if let Some(v) = kv.get("nn_dropout")? {
            cfg.nn.dropout_rate = v;
        }
        if let Some(v) = kv.get("nn_learning_rate")? {
            cfg.nn.learning_rate = v;
        }
        if let Some(v) = kv.get("nn_batch_size")? {
            cfg.nn.batch_size = v;
        }
        if let Some(v) = kv.get("nn_epochs")? {
            cfg.nn.epochs = v;
        }
        if let Some(v) = kv.get("nn_lookback")? {
            cfg.nn.lookback = v;
        }
        if let Some(v) = kv.get("nn_patience")? {
            cfg.nn.patience = v;
        }
        if let Some(v) = kv.get("nn_validation_fraction")? {
            cfg.nn.validation_fraction = v;
        }
        if let Some(v) = kv.get("per_node")? {
            cfg.per_node = v;
        }
        if let Some(v) = kv.get("theta_quantity")? {
            cfg.theta_quantity = v;
        }
        if let Some(v) = kv.get("gbt_rounds")? {
            cfg.gbt.num_rounds = v;
        }
        if let Some(v) = kv.get("gbt_depth")? {
            cfg.gbt.max_depth = v;
        }
        if let Some(v) = kv.get("gbt_lambda")? {
            cfg.gbt.reg_lambda = v;
        }
        if let Some(v) = kv.get("gbt_gamma")? {
            cfg.gbt.min_split_gain = v;
        }
        if let Some(v) = kv.get("gbt_learning_rate")? {
            cfg.gbt.learning_rate = v;
        }
        if let Some(v) = kv.get("gamma_inc")? {
            cfg.costs.gamma_inc = v;
        }
        if let Some(v) = kv.get("gamma_dec")? {
            cfg.costs.gamma_dec = v;
        }
        if let Some(v) = kv.get("prox_inc")? {
            cfg.costs.prox_inc = v;
        }
        if let Some(v) = kv.get("prox_dec")? {
            cfg.costs.prox_dec = v;
        }
        match (kv.get::<f64>("budget")?, kv.get::<f64>("share")?) {
            (Some(_), Some(_)) => return Err(invalid("set either `budget` or `share`, not both")),
            (Some(b), None) => cfg.budget = BudgetRule::Fixed(b),
            (None, Some(s)) => cfg.budget = BudgetRule::Share(s),
            (None, None) => {}
        }
        if let Some(s) = parse_with("risk_limit") {
            cfg.risk = match s {
                "same" => RiskRule::SameAsBudget,
                "half" => RiskRule::HalfBudget,
                "none" => RiskRule::Unlimited,
                other => RiskRule::Fixed(
                    other
                        .parse()
                        .map_err(|_| invalid(format!("risk_limit `{other}`")))?,
                ),
            };
        }
        if let Some(v) = kv.get_list("shares")? {
            cfg.shares = v;
        }
        if let Some(v) = kv.get("beta")? {
            cfg.beta = v;
        }
        if let Some(v) = kv.get("sample_days")? {
            cfg.sample_days = v;
        }
        if let Some(v) = kv.get("exclusive")? {
            cfg.exclusive = v;
        }
        if let Some(v) = kv.get("node_limit")? {
            cfg.node_limit = v;
        }
        if let Some(v) = kv.get("risk_free_rate")? {
            cfg.risk_free_rate = v;
        }
        if let Some(v) = kv.get("cheat")? {
            cfg.cheat = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Key-value text that [`Self::from_key_values`] reads back to `self`.
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        kv.insert("train_days", self.train_days);
        kv.insert("retrain_months", self.retrain_months);
        kv.insert("scenario", self.scenario);
        kv.insert("model", self.model);
        kv.insert(
            "nn_hidden",
            self.nn
                .hidden_units
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.insert("nn_dropout", self.nn.dropout_rate);
        kv.insert("nn_learning_rate", self.nn.learning_rate);
        kv.insert("nn_batch_size", self.nn.batch_size);
        kv.insert("nn_epochs", self.nn.epochs);
        kv.insert("nn_lookback", self.nn.lookback);
        kv.insert("nn_patience", self.nn.patience);
        kv.insert("nn_validation_fraction", self.nn.validation_fraction);
        kv.insert("per_node", self.per_node);
        kv.insert("theta_quantity", self.theta_quantity);
        kv.insert("gbt_rounds", self.gbt.num_rounds);
        kv.insert("gbt_depth", self.gbt.max_depth);
        kv.insert("gbt_lambda", self.gbt.reg_lambda);
        kv.insert("gbt_gamma", self.gbt.min_split_gain);
        kv.insert("gbt_learning_rate", self.gbt.learning_rate);
        kv.insert("gamma_inc", self.costs.gamma_inc);
        kv.insert("gamma_dec", self.costs.gamma_dec);
        kv.insert("prox_inc", self.costs.prox_inc);
        kv.insert("prox_dec", self.costs.prox_dec);
        match self.budget {
            BudgetRule::Fixed(b) => kv.insert("budget", b),
            BudgetRule::Share(s) => kv.insert("share", s),
        }
        kv.insert(
            "risk_limit",
            match self.risk {
                RiskRule::SameAsBudget => "same".to_string(),
                RiskRule::HalfBudget => "half".to_string(),
                RiskRule::Unlimited => "none".to_string(),
                RiskRule::Fixed(c) => c.to_string(),
            },
        );
        if !self.shares.is_empty() {
            kv.insert("shares", join(&self.shares));
        }
        kv.insert("beta", self.beta);
        kv.insert("sample_days", self.sample_days);
        kv.insert("exclusive", self.exclusive);
        kv.insert("node_limit", self.node_limit);
        kv.insert("risk_free_rate", self.risk_free_rate);
        kv.insert("cheat", self.cheat);
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        BacktestConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_keys() {
        let kv = KeyValues::parse(
            "scenario = partial_ps\nmodel = lstm\nnn_hidden = 8,4\nshare = 0.01\n\
             risk_limit = none\nshares = 0.01, 0.05\ngamma_inc = 0.25\n",
        )
        .unwrap();
        let cfg = BacktestConfig::from_key_values(&kv).unwrap();
        assert_eq!(cfg.scenario, Scenario::PartialPs);
        assert_eq!(cfg.model, ModelKind::Lstm);
        assert_eq!(cfg.nn.hidden_units, vec![8, 4]);
        assert_eq!(cfg.budget, BudgetRule::Share(0.01));
        assert_eq!(cfg.risk, RiskRule::Unlimited);
        assert_eq!(cfg.shares, vec![0.01, 0.05]);
        assert_eq!(cfg.costs.gamma_inc, 0.25);
    }

    #[test]
    fn key_values_round_trip() {
        let cfg = BacktestConfig {
            shares: vec![0.01, 0.1],
            budget: BudgetRule::Fixed(250.0),
            risk: RiskRule::Fixed(75.5),
            ..BacktestConfig::default()
        };
        let text = cfg.to_key_values().to_text();
        let back = BacktestConfig::from_key_values(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "share = 0.5",
            "budget = 10\nshare = 0.01",
            "shares = 0.0",
            "train_days = 10",
            "sample_days = 0",
            "unknown_key = 1",
            "risk_limit = lots",
        ] {
            let kv = KeyValues::parse(text).unwrap();
            assert!(BacktestConfig::from_key_values(&kv).is_err(), "{text}");
        }
    }

    #[test]
    fn every_key_is_documented_once() {
        let mut keys: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        let n = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), n);
        let written = BacktestConfig::default().to_key_values();
        for k in written.keys() {
            assert!(keys.contains(&k), "{k}");
        }
    }
}
