//! Dense-layer kernels shared by both network kinds. Weights are row-major
//! `out x in` slices of a flat parameter vector.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn sigmoid(z: f64) -> f64 {
    crate::scaling::logistic(z)
}

/// `out = W x + b`.
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n_in).zip(b)) {
        *o = bias + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Accumulates `gw += delta x^T`, `gb += delta` and, when given,
/// `dx += W^T delta`.
pub(crate) fn affine_backward(
    w: &[f64],
    x: &[f64],
    delta: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    for (k, d) in delta.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        gb[k] += d;
        for (g, v) in gw[k * n_in..(k + 1) * n_in].iter_mut().zip(x) {
            *g += d * v;
        }
    }
    if let Some(dx) = dx {
        for (k, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            for (acc, a) in dx.iter_mut().zip(&w[k * n_in..(k + 1) * n_in]) {
                *acc += d * a;
            }
        }
    }
}

/// Uniform in `±1/sqrt(fan_in)`.
pub(crate) fn init_uniform(rng: &mut ChaCha8Rng, params: &mut [f64], fan_in: usize) {
    let r = 1.0 / (fan_in.max(1) as f64).sqrt();
    for p in params {
        *p = rng.random_range(-r..r);
    }
}

/// Inverted dropout applied during training.
pub struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub rate: f64,
}

impl Dropout<'_> {
    /// Mask entries are 0 or `1 / (1 - rate)`.
    pub(crate) fn mask(&mut self, n: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.rate);
        (0..n)
            .map(|_| if self.rng.random::<f64>() < self.rate { 0.0 } else { keep })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_backward() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.5, -0.5];
        let x = [1.0, 0.0, -1.0];
        let mut out = [0.0; 2];
        affine(&w, &b, &x, &mut out);
        assert_eq!(out, [-1.5, -2.5]);
        let mut gw = [0.0; 6];
        let mut gb = [0.0; 2];
        let mut dx = [0.0; 3];
        affine_backward(&w, &x, &[1.0, 2.0], &mut gw, &mut gb, Some(&mut dx));
        assert_eq!(gw, [1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(gb, [1.0, 2.0]);
        assert_eq!(dx, [9.0, 12.0, 15.0]);
    }

    #[test]
    fn dropout_mask_rate() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Dropout { rng: &mut rng, rate: 0.2 };
        let m = d.mask(10_000);
        let zeros = m.iter().filter(|v| **v == 0.0).count() as f64 / 1e4;
        assert!((zeros - 0.2).abs() < 0.02);
        assert!(m.iter().all(|v| *v == 0.0 || *v == 1.25));
    }
}
