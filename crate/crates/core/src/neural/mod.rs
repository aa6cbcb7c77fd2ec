//! MLP and LSTM regressors trained from scratch on sigmoid-scaled targets.
//!
//! Both networks keep their parameters in one flat vector so that the
//! optimizer, gradient check and serialization treat them alike. Hidden
//! layers use tanh and the single output unit is a sigmoid, so raw outputs
//! live in (0, 1) and are unscaled by the target's `theta`.

mod adam;
mod data;
mod forecast;
mod gradcheck;
mod layers;
mod lstm;
mod mlp;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scaling::ScalingError;

pub use adam::Adam;
pub use data::SeriesDataset;
pub use forecast::{
    ForecastRow, ForecastSeries, ModelBundle, QuantityForecaster, SpreadForecaster,
    BUNDLE_VERSION,
};
pub use gradcheck::{gradient_check, GradientCheck};
pub use layers::Dropout;
pub use lstm::Lstm;
pub use mlp::Mlp;
pub use train::{mse, train, TrainReport};

pub const DEFAULT_LOOKBACK: usize = 24;
pub const DEFAULT_PATIENCE: usize = 10;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss became non-finite at epoch {epoch} (last finite loss {last_loss})")]
    NonFiniteLoss { epoch: usize, last_loss: f64 },
    #[error("feature mismatch: model trained on {expected:?}, got {got:?}")]
    FeatureMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error("model bundle: {0}")]
    Bundle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Lstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Lstm => "lstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mlp" => Ok(ModelKind::Mlp),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(NnError::InvalidHyperparams(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Market whose published architecture a preset reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketPreset {
    Pjm,
    IsoNe,
    Caiso,
}

impl FromStr for MarketPreset {
    type Err = NnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pjm" => Ok(MarketPreset::Pjm),
            "isone" | "iso-ne" | "iso_ne" => Ok(MarketPreset::IsoNe),
            "caiso" => Ok(MarketPreset::Caiso),
            other => Err(NnError::InvalidHyperparams(format!("unknown market preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnHyperparams {
    /// For an LSTM the first two widths are recurrent layers.
    pub hidden_units: Vec<usize>,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Hours fed to the LSTM per sample; ignored by the MLP.
    pub lookback: usize,
    pub patience: usize,
    /// Trailing share of the samples held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for NnHyperparams {
    fn default() -> Self {
        Self::preset(MarketPreset::Pjm, ModelKind::Mlp)
    }
}

impl NnHyperparams {
    pub fn preset(market: MarketPreset, kind: ModelKind) -> Self {
        let hidden_units = match (market, kind) {
            (MarketPreset::IsoNe, ModelKind::Mlp) => vec![64, 32],
            (_, ModelKind::Mlp) => vec![128, 64, 32],
            (MarketPreset::IsoNe, ModelKind::Lstm) => vec![32, 64, 64, 32],
            (_, ModelKind::Lstm) => vec![64, 128, 128, 64, 32],
        };
        Self {
            hidden_units,
            dropout_rate: 0.2,
            learning_rate: 0.001,
            batch_size: 2048,
            epochs: 100,
            seed: 0,
            lookback: DEFAULT_LOOKBACK,
            patience: DEFAULT_PATIENCE,
            validation_fraction: DEFAULT_VALIDATION_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidHyperparams(m.to_string()));
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return bad("hidden_units must be a nonempty list of positive widths");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lookback == 0 {
            return bad("batch_size, epochs and lookback must be positive");
        }
        if !(0.0..0.5).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 0.5)");
        }
        Ok(())
    }
}

/// A trained or freshly initialized network of either kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Network {
    Mlp(Mlp),
    Lstm { lookback: usize, net: Lstm },
}

impl Network {
    pub fn new(kind: ModelKind, input: usize, hp: &NnHyperparams) -> Self {
        let mut rng = crate::seed::rng_for(hp.seed, "nn-init");
        match kind {
            ModelKind::Mlp => Network::Mlp(Mlp::new(input, &hp.hidden_units, &mut rng)),
            ModelKind::Lstm => Network::Lstm {
                lookback: hp.lookback,
                net: Lstm::new(input, &hp.hidden_units, &mut rng),
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Network::Mlp(_) => ModelKind::Mlp,
            Network::Lstm { .. } => ModelKind::Lstm,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Network::Mlp(m) => m.input_dim(),
            Network::Lstm { net, .. } => net.input_dim(),
        }
    }

    /// Rows of history consumed per prediction, the current hour last.
    pub fn window(&self) -> usize {
        match self {
            Network::Mlp(_) => 1,
            Network::Lstm { lookback, .. } => *lookback,
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Network::Mlp(m) => &m.params,
            Network::Lstm { net, .. } => &net.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        match self {
            Network::Mlp(m) => &mut m.params,
            Network::Lstm { net, .. } => &mut net.params,
        }
    }

    /// Raw sigmoid output for a window of rows (the last row is the hour
    /// being predicted; an MLP looks at that row only).
    pub fn predict(&self, window: &[&[f64]]) -> f64 {
        match self {
            Network::Mlp(m) => m.predict(window.last().expect("nonempty window")),
            Network::Lstm { net, .. } => net.predict(window),
        }
    }

    pub(crate) fn accumulate_gradient(
        &self,
        window: &[&[f64]],
        target: f64,
        scale: f64,
        dropout: Option<&mut Dropout<'_>>,
        grad: &mut [f64],
    ) -> f64 {
        match self {
            Network::Mlp(m) => m.accumulate_gradient(
                window.last().expect("nonempty window"),
                target,
                scale,
                dropout,
                grad,
            ),
            Network::Lstm { net, .. } => net.accumulate_gradient(window, target, scale, dropout, grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_architectures() {
        let pjm = NnHyperparams::preset(MarketPreset::Pjm, ModelKind::Mlp);
        assert_eq!(pjm.hidden_units, vec![128, 64, 32]);
        assert_eq!(pjm.learning_rate, 0.001);
        assert_eq!(pjm.batch_size, 2048);
        assert_eq!(pjm.dropout_rate, 0.2);
        assert_eq!(
            NnHyperparams::preset(MarketPreset::IsoNe, ModelKind::Mlp).hidden_units,
            vec![64, 32]
        );
        assert_eq!(
            NnHyperparams::preset(MarketPreset::Caiso, ModelKind::Lstm).hidden_units,
            vec![64, 128, 128, 64, 32]
        );
        assert_eq!(
            NnHyperparams::preset(MarketPreset::IsoNe, ModelKind::Lstm).hidden_units,
            vec![32, 64, 64, 32]
        );
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut hp = NnHyperparams::default();
        assert!(hp.validate().is_ok());
        hp.dropout_rate = 1.0;
        assert!(hp.validate().is_err());
        hp.dropout_rate = 0.2;
        hp.hidden_units.clear();
        assert!(hp.validate().is_err());
    }

    #[test]
    fn prediction_is_repeatable_and_in_unit_interval() {
        let hp = NnHyperparams {
            hidden_units: vec![4, 3],
            lookback: 3,
            ..NnHyperparams::default()
        };
        let rows = [[0.5, -1.0], [2.0, 0.1], [-0.3, 0.0]];
        let window: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        for kind in [ModelKind::Mlp, ModelKind::Lstm] {
            let net = Network::new(kind, 2, &hp);
            let a = net.predict(&window);
            assert!(a > 0.0 && a < 1.0);
            assert_eq!(a, net.predict(&window));
        }
    }
}
