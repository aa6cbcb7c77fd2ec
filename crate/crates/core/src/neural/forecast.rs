//! Spread and net-virtual-quantity forecasters built on the raw networks.
//!
//! Market features are z-scored with statistics frozen on the training
//! hours. The shared spread model appends a one-hot `node_<id>` block so a
//! single network serves every node; per-node mode trains one network per
//! node on the market features alone.

use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{train, ModelKind, Network, NnError, NnHyperparams, SeriesDataset, TrainReport};
use crate::market::{FeatureSet, Hour, MarketData};
use crate::scaling::{
    sigmoid_scale, sigmoid_unscale, theta_from_spreads, zscore_fit, ScalingConfig,
};

pub const BUNDLE_VERSION: u32 = 1;

/// Raw outputs are kept this far inside (0, 1) before unscaling, since a
/// saturated sigmoid can round to exactly 0 or 1.
const RAW_MARGIN: f64 = 1e-15;

fn unscale(raw: f64, theta: f64) -> Result<f64, NnError> {
    Ok(sigmoid_unscale(raw.clamp(RAW_MARGIN, 1.0 - RAW_MARGIN), theta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub hour: Hour,
    /// Present for spread forecasts.
    pub node: Option<String>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastSeries {
    pub rows: Vec<ForecastRow>,
}

fn check_features(expected: &[String], features: &FeatureSet) -> Result<(), NnError> {
    if features.names != expected {
        return Err(NnError::FeatureMismatch {
            expected: expected.to_vec(),
            got: features.names.clone(),
        });
    }
    Ok(())
}

fn check_range(hours: &Range<usize>, len: usize) -> Result<(), NnError> {
    if hours.start >= hours.end || hours.end > len {
        return Err(NnError::ShapeMismatch(format!(
            "hour range {hours:?} is empty or exceeds {len} hours"
        )));
    }
    Ok(())
}

/// Normalized feature rows for `start..end`; row `k` is hour `start + k`.
fn normalized_rows(
    scaling: &ScalingConfig,
    features: &FeatureSet,
    start: usize,
    end: usize,
) -> Result<Vec<Vec<f64>>, NnError> {
    features.frames[start..end]
        .iter()
        .map(|f| Ok(scaling.feature_stats.transform_row(&f.values)?))
        .collect()
}

fn fit_scaling(
    features: &FeatureSet,
    train: &Range<usize>,
) -> Result<ScalingConfig, NnError> {
    let rows: Vec<Vec<f64>> = features.frames[train.clone()]
        .iter()
        .map(|f| f.values.clone())
        .collect();
    Ok(ScalingConfig {
        feature_stats: zscore_fit(&features.names, &rows)?,
        ..ScalingConfig::default()
    })
}

fn one_hot(rows: &[Vec<f64>], node: usize, nodes: usize) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut v = r.clone();
            v.extend((0..nodes).map(|k| if k == node { 1.0 } else { 0.0 }));
            v
        })
        .collect()
}

/// Predicts hours `hours` of one input series whose row 0 is hour
/// `first_row`.
fn predict_series(net: &Network, rows: &[Vec<f64>], first_row: usize, hours: Range<usize>) -> Vec<f64> {
    let w = net.window();
    hours
        .map(|h| {
            let t = h - first_row;
            let lo = (t + 1).saturating_sub(w);
            let window: Vec<&[f64]> = rows[lo..=t].iter().map(Vec::as_slice).collect();
            net.predict(&window)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadForecaster {
    pub kind: ModelKind,
    pub hyperparams: NnHyperparams,
    /// Market feature columns the model was trained on.
    pub feature_names: Vec<String>,
    pub nodes: Vec<String>,
    pub scaling: ScalingConfig,
    pub per_node: bool,
    /// One shared network, or one per node in `nodes` order.
    pub networks: Vec<Network>,
}

impl SpreadForecaster {
    /// Trains on hours `train_hours` of `data`. Each node gets its own `theta`
    /// from the dispersion of its training-window spreads.
    pub fn fit(
        kind: ModelKind,
        data: &MarketData,
        train_hours: Range<usize>,
        hp: &NnHyperparams,
        per_node: bool,
    ) -> Result<(Self, Vec<TrainReport>), NnError> {
        check_range(&train_hours, data.num_hours())?;
        let panel = &data.panel;
        let mut scaling = fit_scaling(&data.features, &train_hours)?;
        for (i, node) in panel.nodes.iter().enumerate() {
            let theta = theta_from_spreads(&panel.spread[i][train_hours.clone()]);
            scaling.node_theta.insert(node.clone(), theta);
        }
        let rows = normalized_rows(&scaling, &data.features, train_hours.start, train_hours.end)?;
        let n = panel.num_nodes();
        let len = rows.len();
        let scaled = |i: usize, t: usize| -> Result<f64, NnError> {
            let theta = scaling.theta_for(&panel.nodes[i]);
            Ok(sigmoid_scale(panel.spread[i][train_hours.start + t], theta)?)
        };

        let mut networks = Vec::new();
        let mut reports = Vec::new();
        if per_node {
            for i in 0..n {
                let targets = (0..len).map(|t| scaled(i, t)).collect::<Result<Vec<_>, _>>()?;
                let ds = SeriesDataset::from_rows(rows.clone(), targets);
                let (net, rep) = train(kind, &ds, hp)?;
                networks.push(net);
                reports.push(rep);
            }
        } else {
            // Time-major sample order keeps the validation tail a block of
            // the latest hours across all nodes.
            let series: Vec<Vec<Vec<f64>>> = (0..n).map(|i| one_hot(&rows, i, n)).collect();
            let mut samples = Vec::with_capacity(n * len);
            let mut targets = Vec::with_capacity(n * len);
            for t in 0..len {
                for i in 0..n {
                    samples.push((i, t));
                    targets.push(scaled(i, t)?);
                }
            }
            let ds = SeriesDataset {
                series,
                samples,
                targets,
            };
            let (net, rep) = train(kind, &ds, hp)?;
            networks.push(net);
            reports.push(rep);
        }
        Ok((
            Self {
                kind,
                hyperparams: hp.clone(),
                feature_names: data.features.names.clone(),
                nodes: panel.nodes.clone(),
                scaling,
                per_node,
                networks,
            },
            reports,
        ))
    }

    /// Network input columns, including the node indicators of the shared
    /// model.
    pub fn input_names(&self) -> Vec<String> {
        let mut names = self.feature_names.clone();
        if !self.per_node {
            names.extend(self.nodes.iter().map(|n| format!("node_{n}")));
        }
        names
    }

    /// Unscaled forecasts `[node][hour - hours.start]` for every node.
    pub fn predict_matrix(
        &self,
        features: &FeatureSet,
        hours: Range<usize>,
    ) -> Result<Vec<Vec<f64>>, NnError> {
        check_features(&self.feature_names, features)?;
        check_range(&hours, features.len())?;
        let window = self.networks[0].window();
        let first = (hours.start + 1).saturating_sub(window);
        let rows = normalized_rows(&self.scaling, features, first, hours.end)?;
        let n = self.nodes.len();
        (0..n)
            .map(|i| {
                let (net, input) = if self.per_node {
                    (&self.networks[i], rows.clone())
                } else {
                    (&self.networks[0], one_hot(&rows, i, n))
                };
                let theta = self.scaling.theta_for(&self.nodes[i]);
                predict_series(net, &input, first, hours.clone())
                    .into_iter()
                    .map(|raw| unscale(raw, theta))
                    .collect()
            })
            .collect()
    }

    /// Forecast rows in hour-major order for the requested nodes (all nodes
    /// when `nodes` is `None`).
    pub fn predict_spread(
        &self,
        features: &FeatureSet,
        hours: Range<usize>,
        nodes: Option<&[String]>,
    ) -> Result<ForecastSeries, NnError> {
        let wanted: Vec<usize> = match nodes {
            None => (0..self.nodes.len()).collect(),
            Some(list) => list
                .iter()
                .map(|n| {
                    self.nodes
                        .iter()
                        .position(|m| m == n)
                        .ok_or_else(|| NnError::UnknownNode(n.clone()))
                })
                .collect::<Result<_, _>>()?,
        };
        let m = self.predict_matrix(features, hours.clone())?;
        let mut rows = Vec::with_capacity(wanted.len() * hours.len());
        for (k, h) in hours.enumerate() {
            for &i in &wanted {
                rows.push(ForecastRow {
                    hour: features.frames[h].hour,
                    node: Some(self.nodes[i].clone()),
                    value: m[i][k],
                });
            }
        }
        Ok(ForecastSeries { rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantityForecaster {
    pub kind: ModelKind,
    pub hyperparams: NnHyperparams,
    pub feature_names: Vec<String>,
    pub scaling: ScalingConfig,
    pub network: Network,
}

impl QuantityForecaster {
    /// Trains on the market-wide net cleared virtual quantity of hours
    /// `train_hours`. `theta_quantity` overrides the default MWh scale.
    pub fn fit(
        kind: ModelKind,
        data: &MarketData,
        train_hours: Range<usize>,
        hp: &NnHyperparams,
        theta_quantity: Option<f64>,
    ) -> Result<(Self, TrainReport), NnError> {
        check_range(&train_hours, data.num_hours())?;
        let mut scaling = fit_scaling(&data.features, &train_hours)?;
        if let Some(t) = theta_quantity {
            scaling.theta_quantity = t;
        }
        scaling.validate()?;
        let rows = normalized_rows(&scaling, &data.features, train_hours.start, train_hours.end)?;
        let targets = data.vbids[train_hours]
            .iter()
            .map(|v| sigmoid_scale(v.net_mwh(), scaling.theta_quantity))
            .collect::<Result<Vec<_>, _>>()?;
        let (network, report) = train(kind, &SeriesDataset::from_rows(rows, targets), hp)?;
        Ok((
            Self {
                kind,
                hyperparams: hp.clone(),
                feature_names: data.features.names.clone(),
                scaling,
                network,
            },
            report,
        ))
    }

    pub fn predict_vector(&self, features: &FeatureSet, hours: Range<usize>) -> Result<Vec<f64>, NnError> {
        check_features(&self.feature_names, features)?;
        check_range(&hours, features.len())?;
        let first = (hours.start + 1).saturating_sub(self.network.window());
        let rows = normalized_rows(&self.scaling, features, first, hours.end)?;
        predict_series(&self.network, &rows, first, hours)
            .into_iter()
            .map(|raw| unscale(raw, self.scaling.theta_quantity))
            .collect()
    }

    pub fn predict_net_virtual_quantity(
        &self,
        features: &FeatureSet,
        hours: Range<usize>,
    ) -> Result<ForecastSeries, NnError> {
        let values = self.predict_vector(features, hours.clone())?;
        Ok(ForecastSeries {
            rows: hours
                .zip(values)
                .map(|(h, value)| ForecastRow {
                    hour: features.frames[h].hour,
                    node: None,
                    value,
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "lowercase")]
pub enum ModelBundle {
    Spread(SpreadForecaster),
    Quantity(QuantityForecaster),
}

#[derive(Serialize, Deserialize)]
struct BundleFile {
    version: u32,
    model: ModelBundle,
}

impl ModelBundle {
    /// JSON text; floats are written in shortest round-trip form so a
    /// reloaded model predicts bit-identically.
    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string(&BundleFile {
            version: BUNDLE_VERSION,
            model: self.clone(),
        })
        .map_err(|e| NnError::Bundle(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: BundleFile = serde_json::from_str(text).map_err(|e| NnError::Bundle(e.to_string()))?;
        if file.version != BUNDLE_VERSION {
            return Err(NnError::Bundle(format!(
                "unsupported bundle version {} (expected {BUNDLE_VERSION})",
                file.version
            )));
        }
        Ok(file.model)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        std::fs::write(path, self.to_json()?).map_err(|e| NnError::Bundle(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| NnError::Bundle(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{generate_synthetic_market, SyntheticConfig};
    use crate::market::{FeatureFrame, MarketVirtualQuantity, SpreadPanel};
    use crate::scaling::logistic;
    use crate::seed::rng_for;
    use chrono::{Duration, TimeZone, Utc};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn quick_hp(kind: ModelKind) -> NnHyperparams {
        NnHyperparams {
            hidden_units: if kind == ModelKind::Mlp { vec![16, 8] } else { vec![8, 8] },
            dropout_rate: 0.0,
            learning_rate: 0.01,
            batch_size: 64,
            epochs: 60,
            seed: 9,
            lookback: 6,
            patience: 10,
            validation_fraction: 0.1,
        }
    }

    #[test]
    fn raw_midpoint_maps_to_zero() {
        assert_eq!(unscale(0.5, 20.0).unwrap(), 0.0);
        assert_eq!(unscale(0.5, 1000.0).unwrap(), 0.0);
        assert!(unscale(1.0, 20.0).unwrap().is_finite());
    }

    /// Market whose net quantity is affine in the load feature plus small
    /// noise; everything else is irrelevant.
    fn quantity_market(hours: usize, seed: u64) -> MarketData {
        let mut rng = rng_for(seed, "quantity-market");
        let noise = Normal::new(0.0, 1.0).unwrap();
        let start = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let names = vec!["load_forecast".to_string(), "temperature".to_string()];
        let mut frames = Vec::new();
        let mut vbids = Vec::new();
        let mut hs = Vec::new();
        for t in 0..hours {
            let hour = start + Duration::hours(t as i64);
            let load: f64 = rng.random_range(800.0..1200.0);
            let temp: f64 = rng.random_range(40.0..80.0);
            let y = 0.05 * (load - 1000.0) + 2.0 * noise.sample(&mut rng);
            frames.push(FeatureFrame {
                hour,
                values: vec![load, temp],
            });
            vbids.push(MarketVirtualQuantity::new(hour, 50.0 + y / 2.0, 50.0 - y / 2.0).unwrap());
            hs.push(hour);
        }
        let zeros = vec![vec![30.0; hours]];
        let panel = SpreadPanel::new(vec!["A".into()], hs, zeros.clone(), zeros, "A").unwrap();
        MarketData::new(panel, FeatureSet::new(names, frames).unwrap(), vbids).unwrap()
    }

    fn r_squared(pred: &[f64], actual: &[f64]) -> f64 {
        let mean = actual.iter().sum::<f64>() / actual.len() as f64;
        let ss_res: f64 = pred.iter().zip(actual).map(|(p, a)| (a - p).powi(2)).sum();
        let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn quantity_forecast_out_of_sample_r_squared() {
        let data = quantity_market(3000, 1);
        let (model, _) =
            QuantityForecaster::fit(ModelKind::Mlp, &data, 0..2500, &quick_hp(ModelKind::Mlp), Some(50.0))
                .unwrap();
        let pred = model.predict_vector(&data.features, 2500..3000).unwrap();
        let actual: Vec<f64> = data.vbids[2500..].iter().map(|v| v.net_mwh()).collect();
        let r2 = r_squared(&pred, &actual);
        assert!(r2 > 0.8, "R^2 {r2}");
        let series = model.predict_net_virtual_quantity(&data.features, 2500..2510).unwrap();
        assert_eq!(series.rows.len(), 10);
        assert!(series.rows.iter().all(|r| r.node.is_none() && r.value.is_finite()));
    }

    #[test]
    fn constant_quantity_is_reproduced() {
        let mut data = quantity_market(600, 2);
        for v in &mut data.vbids {
            *v = MarketVirtualQuantity::new(v.hour, 60.0, 40.0).unwrap();
        }
        let hp = NnHyperparams {
            epochs: 150,
            ..quick_hp(ModelKind::Mlp)
        };
        let (model, _) = QuantityForecaster::fit(ModelKind::Mlp, &data, 0..500, &hp, Some(50.0)).unwrap();
        for p in model.predict_vector(&data.features, 500..600).unwrap() {
            assert!((p - 20.0).abs() <= 0.2, "{p}");
        }
    }

    #[test]
    fn feature_mismatch_is_rejected() {
        let data = quantity_market(200, 3);
        let hp = NnHyperparams {
            epochs: 1,
            ..quick_hp(ModelKind::Mlp)
        };
        let (model, _) = QuantityForecaster::fit(ModelKind::Mlp, &data, 0..150, &hp, Some(50.0)).unwrap();
        let mut other = data.features.clone();
        other.names.swap(0, 1);
        assert!(matches!(
            model.predict_vector(&other, 150..200),
            Err(NnError::FeatureMismatch { .. })
        ));
    }

    fn synthetic(days: usize, seed: u64) -> MarketData {
        let cfg = SyntheticConfig {
            nodes: 3,
            days,
            ..SyntheticConfig::default()
        };
        generate_synthetic_market(&cfg, seed).unwrap().data
    }

    #[test]
    fn spread_sign_accuracy_on_held_out_month() {
        let data = synthetic(150, 4);
        let split = 120 * 24;
        let hp = NnHyperparams {
            epochs: 40,
            ..quick_hp(ModelKind::Mlp)
        };
        let (model, reports) =
            SpreadForecaster::fit(ModelKind::Mlp, &data, 0..split, &hp, false).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(model.input_names().len(), data.features.names.len() + 3);
        let m = model.predict_matrix(&data.features, split..data.num_hours()).unwrap();
        let mut hits = 0;
        let mut total = 0;
        for (i, row) in m.iter().enumerate() {
            for (k, f) in row.iter().enumerate() {
                let a = data.panel.spread[i][split + k];
                hits += usize::from((*f >= 0.0) == (a >= 0.0));
                total += 1;
            }
        }
        let acc = hits as f64 / total as f64;
        assert!(acc > 0.6, "accuracy {acc}");
    }

    #[test]
    fn per_node_mode_trains_one_network_per_node() {
        let data = synthetic(20, 5);
        let hp = NnHyperparams {
            epochs: 2,
            ..quick_hp(ModelKind::Mlp)
        };
        let (model, reports) = SpreadForecaster::fit(ModelKind::Mlp, &data, 0..400, &hp, true).unwrap();
        assert_eq!(model.networks.len(), 3);
        assert_eq!(reports.len(), 3);
        let s = model
            .predict_spread(&data.features, 400..410, Some(&["N02".to_string()]))
            .unwrap();
        assert_eq!(s.rows.len(), 10);
        assert!(matches!(
            model.predict_spread(&data.features, 400..410, Some(&["ZZ".to_string()])),
            Err(NnError::UnknownNode(_))
        ));
    }

    #[test]
    fn bundle_round_trip_is_bit_exact() {
        let data = synthetic(10, 6);
        for kind in [ModelKind::Mlp, ModelKind::Lstm] {
            let hp = NnHyperparams {
                epochs: 2,
                ..quick_hp(kind)
            };
            let (model, _) = SpreadForecaster::fit(kind, &data, 0..200, &hp, false).unwrap();
            let before = model.predict_matrix(&data.features, 200..240).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.json");
            ModelBundle::Spread(model.clone()).save(&path).unwrap();
            let ModelBundle::Spread(loaded) = ModelBundle::load(&path).unwrap() else {
                panic!("wrong target");
            };
            assert_eq!(loaded, model);
            let after = loaded.predict_matrix(&data.features, 200..240).unwrap();
            let bits = |m: &Vec<Vec<f64>>| m.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&before), bits(&after));
        }
        assert!(matches!(
            ModelBundle::from_json(r#"{"version":99,"model":{}}"#),
            Err(NnError::Bundle(_))
        ));
    }

    /// Target driven by the change of one feature over three hours; the
    /// current row alone carries no information about it.
    #[test]
    fn lstm_beats_mlp_on_ramp_target() {
        let mut rng = rng_for(7, "ramp");
        let n = 2400;
        let mut level = 0.0f64;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                level = 0.7 * level + rng.random_range(-1.0..1.0);
                vec![level, rng.random_range(-1.0..1.0)]
            })
            .collect();
        let targets: Vec<f64> = (0..n)
            .map(|t| {
                let d = if t >= 3 { rows[t][0] - rows[t - 3][0] } else { 0.0 };
                logistic(1.5 * d)
            })
            .collect();
        let ds = SeriesDataset::from_rows(rows, targets);
        let test: Vec<usize> = (2000..n).collect();
        let train_ds = SeriesDataset {
            samples: ds.samples[..2000].to_vec(),
            targets: ds.targets[..2000].to_vec(),
            series: ds.series.clone(),
        };
        let (mlp, _) = train(ModelKind::Mlp, &train_ds, &quick_hp(ModelKind::Mlp)).unwrap();
        let (lstm, _) = train(ModelKind::Lstm, &train_ds, &quick_hp(ModelKind::Lstm)).unwrap();
        let e_mlp = super::super::mse(&mlp, &ds, &test);
        let e_lstm = super::super::mse(&lstm, &ds, &test);
        assert!(e_lstm <= e_mlp, "lstm {e_lstm} mlp {e_mlp}");
    }
}
