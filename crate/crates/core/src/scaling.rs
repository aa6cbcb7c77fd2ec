//! Sigmoid target scaling and z-score feature normalization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("scale parameter must be positive and finite, got {0}")]
    NonPositiveTheta(f64),
    #[error("value {0} is outside the open interval (0, 1)")]
    OutOfRange(f64),
    #[error("feature `{0}` needs at least two samples")]
    TooFewSamples(String),
    #[error("quantity scale {quantity} must exceed spread scale {spread}")]
    QuantityThetaTooSmall { spread: f64, quantity: f64 },
    #[error("expected {expected} feature values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value in feature `{0}`")]
    NonFinite(String),
}

fn check_theta(theta: f64) -> Result<(), ScalingError> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(ScalingError::NonPositiveTheta(theta))
    }
}

/// `1 / (1 + exp(-x / theta))`.
pub fn sigmoid_scale(x: f64, theta: f64) -> Result<f64, ScalingError> {
    check_theta(theta)?;
    Ok(logistic(x / theta))
}

/// Inverse of [`sigmoid_scale`].
pub fn sigmoid_unscale(y: f64, theta: f64) -> Result<f64, ScalingError> {
    check_theta(theta)?;
    if !(y > 0.0 && y < 1.0) {
        return Err(ScalingError::OutOfRange(y));
    }
    // ln(y) - ln(1 - y) keeps precision for y near either end.
    Ok(theta * (y.ln() - (-y).ln_1p()))
}

pub(crate) fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Spread scale for one node: sample std of its training spreads clamped to
/// `[10, 40]` $/MWh.
pub fn theta_from_spreads(spreads: &[f64]) -> f64 {
    sample_std(spreads).unwrap_or(20.0).clamp(10.0, 40.0)
}

pub const DEFAULT_THETA_SPREAD: f64 = 20.0;
pub const DEFAULT_QUANTITY_THETA_RATIO: f64 = 50.0;

/// Columns whose names start with one of these prefixes are one-hot
/// indicators and skip z-scoring.
pub const INDICATOR_PREFIXES: [&str; 2] = ["hour_", "node_"];

pub fn is_indicator(name: &str) -> bool {
    INDICATOR_PREFIXES.iter().any(|p| name.starts_with(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureTreatment {
    ZScore,
    /// Constant on the fitting set: centered only.
    Centered,
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStat {
    pub name: String,
    pub mean: f64,
    /// Always positive; 1 for centered and indicator columns.
    pub std: f64,
    pub treatment: FeatureTreatment,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureStats {
    pub stats: Vec<FeatureStat>,
}

impl FeatureStats {
    pub fn names(&self) -> Vec<&str> {
        self.stats.iter().map(|s| s.name.as_str()).collect()
    }

    /// Names of features that were constant on the fitting set.
    pub fn zero_variance(&self) -> Vec<&str> {
        self.stats
            .iter()
            .filter(|s| s.treatment == FeatureTreatment::Centered)
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>, ScalingError> {
        let mut out = row.to_vec();
        self.transform_in_place(&mut out)?;
        Ok(out)
    }

    pub fn transform_in_place(&self, row: &mut [f64]) -> Result<(), ScalingError> {
        if row.len() != self.stats.len() {
            return Err(ScalingError::ShapeMismatch {
                expected: self.stats.len(),
                got: row.len(),
            });
        }
        for (v, s) in row.iter_mut().zip(&self.stats) {
            match s.treatment {
                FeatureTreatment::Indicator => {}
                FeatureTreatment::Centered => *v -= s.mean,
                FeatureTreatment::ZScore => *v = (*v - s.mean) / s.std,
            }
        }
        Ok(())
    }
}

fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(var.sqrt())
}

/// Fits per-column mean and sample standard deviation on `rows` and returns
/// the frozen statistics together with the normalized rows.
pub fn zscore_fit_apply(
    names: &[String],
    rows: &[Vec<f64>],
) -> Result<(FeatureStats, Vec<Vec<f64>>), ScalingError> {
    let stats = zscore_fit(names, rows)?;
    let out = rows
        .iter()
        .map(|r| stats.transform_row(r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((stats, out))
}

pub fn zscore_fit(names: &[String], rows: &[Vec<f64>]) -> Result<FeatureStats, ScalingError> {
    let mut stats = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let mut col = Vec::with_capacity(rows.len());
        for r in rows {
            if r.len() != names.len() {
                return Err(ScalingError::ShapeMismatch {
                    expected: names.len(),
                    got: r.len(),
                });
            }
            if !r[k].is_finite() {
                return Err(ScalingError::NonFinite(name.clone()));
            }
            col.push(r[k]);
        }
        let std = sample_std(&col).ok_or_else(|| ScalingError::TooFewSamples(name.clone()))?;
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let stat = if is_indicator(name) {
            FeatureStat {
                name: name.clone(),
                mean: 0.0,
                std: 1.0,
                treatment: FeatureTreatment::Indicator,
            }
        } else if std <= f64::EPSILON * mean.abs().max(1.0) {
            FeatureStat {
                name: name.clone(),
                mean,
                std: 1.0,
                treatment: FeatureTreatment::Centered,
            }
        } else {
            FeatureStat {
                name: name.clone(),
                mean,
                std,
                treatment: FeatureTreatment::ZScore,
            }
        };
        stats.push(stat);
    }
    Ok(FeatureStats { stats })
}

/// Target scales and frozen feature statistics attached to a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Spread scale used for nodes without an entry in `node_theta`.
    pub theta_spread: f64,
    pub node_theta: BTreeMap<String, f64>,
    pub theta_quantity: f64,
    pub feature_stats: FeatureStats,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            theta_spread: DEFAULT_THETA_SPREAD,
            node_theta: BTreeMap::new(),
            theta_quantity: DEFAULT_QUANTITY_THETA_RATIO * DEFAULT_THETA_SPREAD,
            feature_stats: FeatureStats::default(),
        }
    }
}

impl ScalingConfig {
    pub fn theta_for(&self, node: &str) -> f64 {
        self.node_theta.get(node).copied().unwrap_or(self.theta_spread)
    }

    pub fn validate(&self) -> Result<(), ScalingError> {
        check_theta(self.theta_spread)?;
        check_theta(self.theta_quantity)?;
        for t in self.node_theta.values() {
            check_theta(*t)?;
        }
        if self.theta_quantity <= self.theta_spread {
            return Err(ScalingError::QuantityThetaTooSmall {
                spread: self.theta_spread,
                quantity: self.theta_quantity,
            });
        }
        if let Some(s) = self.feature_stats.stats.iter().find(|s| !(s.std > 0.0)) {
            return Err(ScalingError::NonFinite(s.name.clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(sigmoid_scale(0.0, 20.0).unwrap(), 0.5);
        let oracle = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((sigmoid_scale(20.0, 20.0).unwrap() - oracle).abs() < 1e-15);
        assert!((oracle - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert_eq!(sigmoid_unscale(0.5, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn theta_and_range_errors() {
        assert_eq!(
            sigmoid_scale(1.0, 0.0),
            Err(ScalingError::NonPositiveTheta(0.0))
        );
        assert!(sigmoid_scale(1.0, -3.0).is_err());
        assert_eq!(sigmoid_unscale(1.0, 20.0), Err(ScalingError::OutOfRange(1.0)));
        assert!(sigmoid_unscale(0.0, 20.0).is_err());
        assert!(sigmoid_unscale(f64::NAN, 20.0).is_err());
    }

    #[test]
    fn round_trip_fixed_points() {
        for x in [-500.0, -1.0, 0.0, 1.0, 500.0] {
            let y = sigmoid_scale(x, 40.0).unwrap();
            let back = sigmoid_unscale(y, 40.0).unwrap();
            assert!((back - x).abs() < 1e-9 * f64::max(1.0, x.abs()), "{x} -> {back}");
        }
    }

    #[test]
    fn saturated_scale_is_rejected_by_unscale() {
        let y = sigmoid_scale(50.0 * 20.0, 20.0).unwrap();
        assert_eq!(y, 1.0);
        assert!(sigmoid_unscale(y, 20.0).is_err());
        let y = sigmoid_scale(-50.0 * 20.0, 20.0).unwrap();
        assert!((sigmoid_unscale(y, 20.0).unwrap() + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn zscore_hand_example() {
        let names = vec!["load".to_string()];
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let (stats, out) = zscore_fit_apply(&names, &rows).unwrap();
        // mean 2, sample std 1
        assert_eq!(stats.stats[0].mean, 2.0);
        assert_eq!(stats.stats[0].std, 1.0);
        assert_eq!(out, vec![vec![-1.0], vec![0.0], vec![1.0]]);
    }

    #[test]
    fn constant_feature_is_centered_and_flagged() {
        let names = vec!["fuel".to_string(), "x".to_string()];
        let rows = vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 4.0]];
        let (stats, out) = zscore_fit_apply(&names, &rows).unwrap();
        assert_eq!(stats.zero_variance(), vec!["fuel"]);
        assert!(out.iter().all(|r| r[0] == 0.0));
        assert!(stats.stats.iter().all(|s| s.std > 0.0));
    }

    #[test]
    fn indicator_columns_bypass() {
        let names = vec!["hour_00".to_string(), "node_N01".to_string(), "t".to_string()];
        let rows = vec![
            vec![1.0, 0.0, 3.0],
            vec![0.0, 1.0, 5.0],
            vec![0.0, 0.0, 7.0],
        ];
        let (_, out) = zscore_fit_apply(&names, &rows).unwrap();
        for (r, o) in rows.iter().zip(&out) {
            assert_eq!(r[0], o[0]);
            assert_eq!(r[1], o[1]);
        }
    }

    #[test]
    fn too_few_samples() {
        let names = vec!["a".to_string()];
        assert!(matches!(
            zscore_fit(&names, &[vec![1.0]]),
            Err(ScalingError::TooFewSamples(_))
        ));
    }

    #[test]
    fn theta_rule_clamps() {
        assert_eq!(theta_from_spreads(&[0.0, 1.0, 0.0, 1.0]), 10.0);
        assert_eq!(theta_from_spreads(&[-500.0, 500.0]), 40.0);
        let mid = theta_from_spreads(&[-20.0, 20.0]);
        assert!((mid - 20.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ScalingConfig::default();
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.theta_quantity, 1000.0);
        cfg.theta_quantity = 10.0;
        assert!(matches!(
            cfg.validate(),
            Err(ScalingError::QuantityThetaTooSmall { .. })
        ));
    }

    proptest! {
        #[test]
        fn scale_is_strictly_increasing(a in -1e3f64..1e3, d in 1e-6f64..1e3, theta in 0.5f64..100.0) {
            let lo = sigmoid_scale(a, theta).unwrap();
            let hi = sigmoid_scale(a + d, theta).unwrap();
            prop_assert!(lo <= hi);
            prop_assert!(lo > 0.0 && hi < 1.0 || (a + d) / theta > 36.0);
        }

        #[test]
        fn scale_equivariance(x in -1e3f64..1e3, theta in 0.5f64..100.0) {
            let a = sigmoid_scale(x, theta).unwrap();
            let b = sigmoid_scale(x / theta, 1.0).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
        }

        #[test]
        fn unscale_inverts_scale(u in -50.0f64..18.0, theta in 1.0f64..100.0) {
            // Above ~18 θ the scaled value sits within a few ulps of 1, so the
            // inverse loses relative precision; beyond ~37 θ it rounds to 1.
            let x = u * theta;
            let back = sigmoid_unscale(sigmoid_scale(x, theta).unwrap(), theta).unwrap();
            prop_assert!((back - x).abs() < 1e-9 * f64::max(1.0, x.abs()));
        }

        #[test]
        fn scale_inverts_unscale(y in 1e-6f64..(1.0 - 1e-6), theta in 1.0f64..100.0) {
            let back = sigmoid_scale(sigmoid_unscale(y, theta).unwrap(), theta).unwrap();
            prop_assert!((back - y).abs() <= 1e-12 * y);
        }

        #[test]
        fn zscore_moments(col in proptest::collection::vec(-1e3f64..1e3, 3..60)) {
            let names = vec!["v".to_string()];
            let rows: Vec<Vec<f64>> = col.iter().map(|v| vec![*v]).collect();
            let (stats, out) = zscore_fit_apply(&names, &rows).unwrap();
            prop_assume!(stats.stats[0].treatment == FeatureTreatment::ZScore);
            prop_assume!(stats.stats[0].std > 1e-6);
            let n = out.len() as f64;
            let mean = out.iter().map(|r| r[0]).sum::<f64>() / n;
            let var = out.iter().map(|r| (r[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
