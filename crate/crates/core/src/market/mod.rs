//! Market data model: nodal DA/RT prices, spreads, hourly features, market-wide
//! cleared virtual quantities and trading-cost parameters.

mod io;
mod synthetic;

use chrono::{DateTime, Timelike, Utc};
use thiserror::Error;

pub use io::{
    format_hour, load_features_csv, load_lmp_csv, load_market_dir, load_vbids_csv, parse_hour,
    read_features, read_lmp, read_vbids, write_features_csv, write_lmp_csv, write_market_dir,
    write_vbids_csv, FEATURES_FILE, LMP_FILE, VBIDS_FILE,
};
pub use synthetic::{generate_synthetic_market, SyntheticConfig, SyntheticMarket, SyntheticTruth};

pub type Hour = DateTime<Utc>;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing cell for node {node} at {hour}")]
    MissingCell { node: String, hour: String },
    #[error("duplicate row for node {node} at {hour}")]
    DuplicateRow { node: String, hour: String },
    #[error("reference node `{0}` not present in data")]
    NoReferenceNode(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmpRecord {
    pub hour: Hour,
    pub da_lmp: f64,
    pub rt_lmp: f64,
}

/// Dense node × hour panel of DA and RT prices and their spread.
///
/// Matrices are indexed `[node][hour]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadPanel {
    pub nodes: Vec<String>,
    pub hours: Vec<Hour>,
    pub da: Vec<Vec<f64>>,
    pub rt: Vec<Vec<f64>>,
    pub spread: Vec<Vec<f64>>,
    pub ref_node_index: usize,
}

impl SpreadPanel {
    /// Builds a panel, computing spreads as DA − RT.
    pub fn new(
        nodes: Vec<String>,
        hours: Vec<Hour>,
        da: Vec<Vec<f64>>,
        rt: Vec<Vec<f64>>,
        ref_node: &str,
    ) -> Result<Self, MarketError> {
        let ref_node_index = nodes
            .iter()
            .position(|n| n == ref_node)
            .ok_or_else(|| MarketError::NoReferenceNode(ref_node.to_string()))?;
        if da.len() != nodes.len() || da.iter().any(|r| r.len() != hours.len()) {
            return Err(MarketError::ShapeMismatch(format!(
                "DA matrix is not {} x {}",
                nodes.len(),
                hours.len()
            )));
        }
        for h in &hours {
            check_whole_hour(h)?;
        }
        if da.iter().chain(rt.iter()).flatten().any(|p| !p.is_finite()) {
            return Err(MarketError::Inconsistent("non-finite price".into()));
        }
        let spread = compute_spreads(&da, &rt)?;
        Ok(Self {
            nodes,
            hours,
            da,
            rt,
            spread,
            ref_node_index,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_hours(&self) -> usize {
        self.hours.len()
    }

    pub fn ref_node(&self) -> &str {
        &self.nodes[self.ref_node_index]
    }

    pub fn ref_spread(&self) -> &[f64] {
        &self.spread[self.ref_node_index]
    }

    pub fn node_index(&self, node: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }

    pub fn hour_index(&self, hour: &Hour) -> Option<usize> {
        self.hours.binary_search(hour).ok()
    }

    pub fn record(&self, node: usize, hour: usize) -> LmpRecord {
        LmpRecord {
            hour: self.hours[hour],
            da_lmp: self.da[node][hour],
            rt_lmp: self.rt[node][hour],
        }
    }
}

/// Elementwise DA − RT.
pub fn compute_spreads(da: &[Vec<f64>], rt: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, MarketError> {
    if da.len() != rt.len() {
        return Err(MarketError::ShapeMismatch(format!(
            "{} DA rows vs {} RT rows",
            da.len(),
            rt.len()
        )));
    }
    da.iter()
        .zip(rt)
        .enumerate()
        .map(|(i, (d, r))| {
            if d.len() != r.len() {
                return Err(MarketError::ShapeMismatch(format!(
                    "row {i}: {} DA vs {} RT columns",
                    d.len(),
                    r.len()
                )));
            }
            Ok(d.iter().zip(r).map(|(a, b)| a - b).collect())
        })
        .collect()
}

pub(crate) fn check_whole_hour(h: &Hour) -> Result<(), MarketError> {
    if h.minute() != 0 || h.second() != 0 || h.nanosecond() != 0 {
        return Err(MarketError::Inconsistent(format!(
            "timestamp {h} is not aligned to a whole hour"
        )));
    }
    Ok(())
}

/// Market-wide cleared virtual quantities of the rest of the market for one hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketVirtualQuantity {
    pub hour: Hour,
    pub inc_cleared_mwh: f64,
    pub dec_cleared_mwh: f64,
}

impl MarketVirtualQuantity {
    pub fn new(hour: Hour, inc: f64, dec: f64) -> Result<Self, MarketError> {
        if !(inc >= 0.0 && dec >= 0.0 && inc.is_finite() && dec.is_finite()) {
            return Err(MarketError::Inconsistent(format!(
                "cleared quantities must be finite and non-negative at {}",
                format_hour(&hour)
            )));
        }
        Ok(Self {
            hour,
            inc_cleared_mwh: inc,
            dec_cleared_mwh: dec,
        })
    }

    /// INC minus DEC.
    pub fn net_mwh(&self) -> f64 {
        self.inc_cleared_mwh - self.dec_cleared_mwh
    }

    pub fn total_mwh(&self) -> f64 {
        self.inc_cleared_mwh + self.dec_cleared_mwh
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub hour: Hour,
    pub values: Vec<f64>,
}

/// Hourly feature frames sharing one ordered name list.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub names: Vec<String>,
    pub frames: Vec<FeatureFrame>,
}

impl FeatureSet {
    pub fn new(names: Vec<String>, frames: Vec<FeatureFrame>) -> Result<Self, MarketError> {
        if let Some(f) = frames.iter().find(|f| f.values.len() != names.len()) {
            return Err(MarketError::ShapeMismatch(format!(
                "frame at {} has {} values for {} names",
                format_hour(&f.hour),
                f.values.len(),
                names.len()
            )));
        }
        Ok(Self { names, frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Trading costs and collateral per 1 MWh lot, all in $/MWh.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostSchedule {
    pub gamma_inc: f64,
    pub gamma_dec: f64,
    pub prox_inc: f64,
    pub prox_dec: f64,
}

impl CostSchedule {
    pub fn new(
        gamma_inc: f64,
        gamma_dec: f64,
        prox_inc: f64,
        prox_dec: f64,
    ) -> Result<Self, MarketError> {
        let c = Self {
            gamma_inc,
            gamma_dec,
            prox_inc,
            prox_dec,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), MarketError> {
        let all = [self.gamma_inc, self.gamma_dec, self.prox_inc, self.prox_dec];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(MarketError::InvalidConfig(
                "costs and collateral must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            gamma_inc: self.gamma_inc * k,
            gamma_dec: self.gamma_dec * k,
            prox_inc: self.prox_inc,
            prox_dec: self.prox_dec,
        }
    }
}

/// Offer/bid price convention that guarantees clearance: INC offers at the
/// floor, DEC bids at the cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BidPriceConvention {
    pub price_floor: f64,
    pub price_cap: f64,
}

impl Default for BidPriceConvention {
    fn default() -> Self {
        Self {
            price_floor: -150.0,
            price_cap: 1000.0,
        }
    }
}

impl BidPriceConvention {
    pub fn new(price_floor: f64, price_cap: f64) -> Result<Self, MarketError> {
        if !(price_floor < price_cap) {
            return Err(MarketError::InvalidConfig(format!(
                "price floor {price_floor} must be below cap {price_cap}"
            )));
        }
        Ok(Self {
            price_floor,
            price_cap,
        })
    }

    pub fn inc_offer_price(&self) -> f64 {
        self.price_floor
    }

    pub fn dec_bid_price(&self) -> f64 {
        self.price_cap
    }

    /// INC clears when its offer is at or below the DA price.
    pub fn inc_clears(&self, da_lmp: f64) -> bool {
        self.inc_offer_price() <= da_lmp
    }

    pub fn dec_clears(&self, da_lmp: f64) -> bool {
        self.dec_bid_price() >= da_lmp
    }
}

/// Prices, features and market virtual quantities on one common hour axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub panel: SpreadPanel,
    pub features: FeatureSet,
    pub vbids: Vec<MarketVirtualQuantity>,
}

impl MarketData {
    pub fn new(
        panel: SpreadPanel,
        features: FeatureSet,
        vbids: Vec<MarketVirtualQuantity>,
    ) -> Result<Self, MarketError> {
        let hours = &panel.hours;
        let feat_ok = features.frames.len() == hours.len()
            && features.frames.iter().zip(hours).all(|(f, h)| f.hour == *h);
        if !feat_ok {
            return Err(MarketError::Inconsistent(
                "feature hours do not match price hours".into(),
            ));
        }
        let vb_ok =
            vbids.len() == hours.len() && vbids.iter().zip(hours).all(|(v, h)| v.hour == *h);
        if !vb_ok {
            return Err(MarketError::Inconsistent(
                "virtual-quantity hours do not match price hours".into(),
            ));
        }
        Ok(Self {
            panel,
            features,
            vbids,
        })
    }

    pub fn num_hours(&self) -> usize {
        self.panel.num_hours()
    }
}
