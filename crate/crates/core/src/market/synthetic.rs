//! Seeded synthetic two-settlement market.
//!
//! Link functions (all latent drivers are clamped to ±3 so every component is
//! bounded and symmetric about zero):
//!
//! ```text
//! D(h)      = sin(2π (h − 8) / 24)                     diurnal shape
//! s(d)      = sin(2π d / 365)                          season
//! load_z    = clamp(0.6 D + 0.3 s + 0.6 a_t)           a: AR(1), φ = 0.9
//! temp_z    = clamp(0.5 s + 0.3 D + 0.7 b_t)           b: AR(1), φ = 0.95
//! wind_z    = clamp(c_t)                               c: AR(1), φ = 0.9
//! fuel_z    = clamp(f_d)                               f: daily AR(1), φ = 0.98
//! ramp      = load_z(t) − load_z(t − 3)
//! signal    = k_sig (0.6 load_z + 0.5 tanh(1.5 temp_z) − 0.4 wind_z + 0.2 load_z fuel_z)
//!             + k_ramp ramp
//! y         = k_q clamp(0.8 load_z + k_noise ε),  ε ~ N(0, 1)
//! spread_i  = μ + g_i signal + slope y + U(−√3 σ_i, √3 σ_i) + g_i spike
//! ```
//!
//! Node 0 is the reference node with `g_0 = 1`. DA and RT prices are built
//! around a common energy price so that DA − RT equals the spread above.

use std::f64::consts::PI;

use chrono::{Duration, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{
    FeatureFrame, FeatureSet, Hour, MarketData, MarketError, MarketVirtualQuantity, SpreadPanel,
};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub nodes: usize,
    pub days: usize,
    pub start: NaiveDate,
    /// Mean of every nodal spread, $/MWh.
    pub mean_spread: f64,
    /// Std of the idiosyncratic (uniform) nodal noise, $/MWh.
    pub base_volatility: f64,
    pub signal_scale: f64,
    pub ramp_scale: f64,
    pub spike_probability: f64,
    /// Mean absolute spike size, $/MWh.
    pub spike_scale: f64,
    /// Spread change per MWh of market-wide net virtual quantity; negative.
    pub sensitivity_slope: f64,
    /// MWh per unit of the latent net-quantity driver.
    pub quantity_scale: f64,
    /// Weight of the feature-independent part of the net quantity.
    pub quantity_noise: f64,
    /// Mean hourly cleared INC (and DEC) volume, MWh.
    pub cleared_volume: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            nodes: 5,
            days: 396,
            start: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            mean_spread: 0.5,
            base_volatility: 4.0,
            signal_scale: 8.0,
            ramp_scale: 3.0,
            spike_probability: 0.01,
            spike_scale: 60.0,
            sensitivity_slope: -0.5,
            quantity_scale: 10.0,
            quantity_noise: 0.6,
            cleared_volume: 20.0,
        }
    }
}

const MAX_GAIN: f64 = 1.4;
const MAX_NOISE_FACTOR: f64 = 1.2;
const CLAMP: f64 = 3.0;

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let bad = |m: &str| Err(MarketError::InvalidConfig(m.to_string()));
        if self.nodes == 0 || self.days == 0 {
            return bad("nodes and days must be positive");
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return bad("spike probability must lie in [0, 1]");
        }
        let nonneg = [
            self.base_volatility,
            self.signal_scale,
            self.ramp_scale,
            self.spike_scale,
            self.quantity_scale,
            self.quantity_noise,
            self.cleared_volume,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("scales must be finite and non-negative");
        }
        if !(self.sensitivity_slope.is_finite() && self.sensitivity_slope < 0.0) {
            return bad("sensitivity slope must be negative");
        }
        if !self.mean_spread.is_finite() {
            return bad("mean spread must be finite");
        }
        Ok(())
    }

    pub fn node_name(i: usize) -> String {
        format!("N{:02}", i + 1)
    }

    pub fn reference_node(&self) -> String {
        Self::node_name(0)
    }

    /// Worst-case |spread| when no spikes occur.
    pub fn base_range(&self) -> f64 {
        let signal_max = self.signal_scale * (0.6 * CLAMP + 0.5 + 0.4 * CLAMP + 0.2 * CLAMP * CLAMP)
            + self.ramp_scale * 2.0 * CLAMP;
        self.mean_spread.abs()
            + MAX_GAIN * signal_max
            + self.sensitivity_slope.abs() * self.quantity_scale * CLAMP
            + 3f64.sqrt() * self.base_volatility * MAX_NOISE_FACTOR
    }

    pub fn feature_names() -> Vec<String> {
        let mut names: Vec<String> = ["load_forecast", "temperature", "wind_forecast", "fuel_price"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((0..24).map(|h| format!("hour_{h:02}")));
        names
    }
}

/// Ground-truth latent components, exposed so tests can check recoverability.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// Reference-node spread minus the net-quantity, noise and spike terms.
    pub ref_signal: Vec<f64>,
    /// Market-wide net virtual quantity (identical to `vbids` net).
    pub net_quantity: Vec<f64>,
    pub node_gain: Vec<f64>,
    pub spike: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMarket {
    pub data: MarketData,
    pub truth: SyntheticTruth,
}

fn clamp(x: f64) -> f64 {
    x.clamp(-CLAMP, CLAMP)
}

struct Ar1 {
    phi: f64,
    state: f64,
    innov: Normal<f64>,
}

impl Ar1 {
    fn new(phi: f64) -> Self {
        Self {
            phi,
            state: 0.0,
            innov: Normal::new(0.0, (1.0 - phi * phi).sqrt()).expect("valid std"),
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.state = self.phi * self.state + self.innov.sample(rng);
        self.state
    }
}

pub fn generate_synthetic_market(
    cfg: &SyntheticConfig,
    seed: u64,
) -> Result<SyntheticMarket, MarketError> {
    cfg.validate()?;
    let n_hours = cfg.days * 24;
    let mut rng = rng_for(seed, "synthetic-market");
    let std_normal = Normal::new(0.0, 1.0).expect("valid");
    let spike_exp = Exp::new(1.0 / cfg.spike_scale.max(1e-12)).expect("valid rate");

    let node_gain: Vec<f64> = (0..cfg.nodes)
        .map(|i| {
            let u: f64 = rng.random();
            if i == 0 {
                1.0
            } else {
                0.6 + 0.8 * u
            }
        })
        .collect();
    let node_noise: Vec<f64> = (0..cfg.nodes)
        .map(|_| cfg.base_volatility * (0.8 + 0.4 * rng.random::<f64>()))
        .collect();
    let node_basis: Vec<f64> = (0..cfg.nodes)
        .map(|_| rng.random_range(-3.0..3.0))
        .collect();

    let (mut a, mut b, mut c, mut f) = (Ar1::new(0.9), Ar1::new(0.95), Ar1::new(0.9), Ar1::new(0.98));
    let start = Utc.from_utc_datetime(&cfg.start.and_hms_opt(0, 0, 0).expect("midnight"));

    let names = SyntheticConfig::feature_names();
    let mut hours: Vec<Hour> = Vec::with_capacity(n_hours);
    let mut frames = Vec::with_capacity(n_hours);
    let mut load_hist: Vec<f64> = Vec::with_capacity(n_hours);
    let mut signal = Vec::with_capacity(n_hours);
    let mut net_q = Vec::with_capacity(n_hours);
    let mut spikes = Vec::with_capacity(n_hours);
    let mut da = vec![Vec::with_capacity(n_hours); cfg.nodes];
    let mut rt = vec![Vec::with_capacity(n_hours); cfg.nodes];
    let mut vbids = Vec::with_capacity(n_hours);
    let mut fuel_z = 0.0;

    for t in 0..n_hours {
        let day = t / 24;
        let hod = t % 24;
        let hour = start + Duration::hours(t as i64);
        if hod == 0 {
            fuel_z = clamp(f.step(&mut rng));
        }
        let diurnal = (2.0 * PI * (hod as f64 - 8.0) / 24.0).sin();
        let season = (2.0 * PI * day as f64 / 365.0).sin();
        let load_z = clamp(0.6 * diurnal + 0.3 * season + 0.6 * a.step(&mut rng));
        let temp_z = clamp(0.5 * season + 0.3 * diurnal + 0.7 * b.step(&mut rng));
        let wind_z = clamp(c.step(&mut rng));
        let ramp = if t >= 3 { load_z - load_hist[t - 3] } else { 0.0 };
        load_hist.push(load_z);

        let sig = cfg.signal_scale
            * (0.6 * load_z + 0.5 * (1.5 * temp_z).tanh() - 0.4 * wind_z + 0.2 * load_z * fuel_z)
            + cfg.ramp_scale * ramp;
        let eps: f64 = std_normal.sample(&mut rng);
        let y = cfg.quantity_scale * clamp(0.8 * load_z + cfg.quantity_noise * eps);
        let spike = if cfg.spike_probability > 0.0 && rng.random::<f64>() < cfg.spike_probability {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * spike_exp.sample(&mut rng)
        } else {
            0.0
        };

        let energy = 35.0 + 12.0 * load_z + 6.0 * fuel_z;
        for i in 0..cfg.nodes {
            let half = 3f64.sqrt() * node_noise[i];
            let noise = if half > 0.0 {
                rng.random_range(-half..=half)
            } else {
                0.0
            };
            let s = cfg.mean_spread
                + node_gain[i] * sig
                + cfg.sensitivity_slope * y
                + noise
                + node_gain[i] * spike;
            let r = energy + node_basis[i];
            rt[i].push(r);
            da[i].push(r + s);
        }

        let volume = cfg.cleared_volume * (0.8 + 0.4 * rng.random::<f64>());
        let volume = volume.max(0.5 * y.abs() + 1.0);
        vbids.push(MarketVirtualQuantity::new(
            hour,
            volume + 0.5 * y,
            volume - 0.5 * y,
        )?);

        let mut values = Vec::with_capacity(names.len());
        values.push(1000.0 + 200.0 * load_z);
        values.push(60.0 + 15.0 * temp_z);
        values.push(300.0 + 100.0 * wind_z);
        values.push(3.0 + 0.5 * fuel_z);
        values.extend((0..24).map(|k| if k == hod { 1.0 } else { 0.0 }));
        frames.push(FeatureFrame { hour, values });

        hours.push(hour);
        signal.push(cfg.mean_spread + sig);
        net_q.push(vbids[t].net_mwh());
        spikes.push(spike);
    }

    let nodes: Vec<String> = (0..cfg.nodes).map(SyntheticConfig::node_name).collect();
    let panel = SpreadPanel::new(nodes, hours, da, rt, &cfg.reference_node())?;
    let features = FeatureSet::new(names, frames)?;
    let data = MarketData::new(panel, features, vbids)?;
    Ok(SyntheticMarket {
        data,
        truth: SyntheticTruth {
            ref_signal: signal,
            net_quantity: net_q,
            node_gain,
            spike: spikes,
        },
    })
}
