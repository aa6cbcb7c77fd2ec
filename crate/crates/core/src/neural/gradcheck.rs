//! Central-difference check of the analytic parameter gradient.

use rand::seq::index::sample;

use super::Network;
use crate::seed::rng_for;

/// Gradients whose magnitude is below this are compared in absolute terms;
/// central differences at `eps = 1e-5` carry roughly `1e-11` of rounding
/// noise, which would otherwise dominate the ratio for near-zero entries.
pub const RELATIVE_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst: usize,
    pub checked: usize,
}

/// Compares `d (out - target)^2 / d param` against central differences on
/// `count` randomly chosen parameters (all of them if there are fewer).
/// Dropout is off.
pub fn gradient_check(
    net: &Network,
    window: &[&[f64]],
    target: f64,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> GradientCheck {
    let n = net.params().len();
    let mut analytic = vec![0.0; n];
    net.accumulate_gradient(window, target, 1.0, None, &mut analytic);
    let mut rng = rng_for(seed, "gradient-check");
    let chosen: Vec<usize> = if count >= n {
        (0..n).collect()
    } else {
        let mut v = sample(&mut rng, n, count).into_vec();
        v.sort_unstable();
        v
    };
    let loss = |net: &Network| {
        let e = net.predict(window) - target;
        e * e
    };
    let mut probe = net.clone();
    let mut result = GradientCheck {
        max_relative_error: 0.0,
        worst: 0,
        checked: chosen.len(),
    };
    for &k in &chosen {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + epsilon;
        let up = loss(&probe);
        probe.params_mut()[k] = orig - epsilon;
        let down = loss(&probe);
        probe.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = analytic[k].abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        let err = (analytic[k] - numeric).abs() / scale;
        if err > result.max_relative_error {
            result.max_relative_error = err;
            result.worst = k;
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::super::{Mlp, ModelKind, NnHyperparams};
    use super::*;
    use rand::Rng;

    fn random_rows(seed: u64, steps: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut rng = rng_for(seed, "rows");
        (0..steps)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    }

    #[test]
    fn single_hidden_unit_mlp() {
        let hp = NnHyperparams {
            hidden_units: vec![1],
            seed: 3,
            ..NnHyperparams::default()
        };
        let net = Network::new(ModelKind::Mlp, 3, &hp);
        let rows = random_rows(1, 1, 3);
        let w: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let r = gradient_check(&net, &w, 0.8, 1e-5, 200, 0);
        assert_eq!(r.checked, 3 + 1 + 1 + 1);
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }

    #[test]
    fn four_step_lstm() {
        let hp = NnHyperparams {
            hidden_units: vec![3, 4, 5],
            lookback: 4,
            seed: 4,
            ..NnHyperparams::default()
        };
        let net = Network::new(ModelKind::Lstm, 2, &hp);
        let rows = random_rows(2, 4, 2);
        let w: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let r = gradient_check(&net, &w, 0.2, 1e-5, 200, 1);
        assert_eq!(r.checked, 200);
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_network_output_bias() {
        let net = Network::Mlp(Mlp {
            sizes: vec![2, 3, 1],
            params: vec![0.0; 2 * 3 + 3 + 3 + 1],
        });
        let w: Vec<&[f64]> = vec![&[0.0, 0.0]];
        let r = gradient_check(&net, &w, 1.0, 1e-5, 200, 0);
        assert!(r.max_relative_error < 1e-8, "{r:?}");
        let mut g = vec![0.0; net.params().len()];
        net.accumulate_gradient(&w, 1.0, 1.0, None, &mut g);
        assert_eq!(*g.last().unwrap(), -0.25);
    }
}
