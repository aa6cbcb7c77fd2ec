//! Fully connected network: tanh hidden layers, one sigmoid output.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{affine, affine_backward, init_uniform, sigmoid, Dropout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// Layer widths from input to the single output.
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Offsets of `(W, b)` for each layer in the flat vector.
pub(crate) fn dense_offsets(sizes: &[usize], start: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(sizes.len().saturating_sub(1));
    let mut at = start;
    for w in sizes.windows(2) {
        out.push((at, at + w[0] * w[1]));
        at += w[0] * w[1] + w[1];
    }
    out
}

pub(crate) fn dense_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub(crate) fn init_dense(rng: &mut ChaCha8Rng, sizes: &[usize], params: &mut [f64], start: usize) {
    for (k, (w, b)) in dense_offsets(sizes, start).into_iter().enumerate() {
        let (n_in, n_out) = (sizes[k], sizes[k + 1]);
        init_uniform(rng, &mut params[w..w + n_in * n_out], n_in);
        params[b..b + n_out].fill(0.0);
    }
}

/// Activations of a dense stack; `inputs[k]` feeds layer `k` (after
/// dropout), `hidden[k]` is the tanh output of hidden layer `k`.
pub(crate) struct DenseTrace {
    inputs: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    pub output: f64,
}

/// Runs a tanh/.../sigmoid stack whose first input is `x`. Dropout is applied
/// to `x` itself when `drop_input` is set and to every hidden output.
pub(crate) fn dense_forward(
    sizes: &[usize],
    params: &[f64],
    start: usize,
    x: &[f64],
    mut dropout: Option<&mut Dropout<'_>>,
    drop_input: bool,
) -> DenseTrace {
    let offsets = dense_offsets(sizes, start);
    let layers = offsets.len();
    let mut inputs = Vec::with_capacity(layers);
    let mut hidden = Vec::with_capacity(layers.saturating_sub(1));
    let mut masks = Vec::with_capacity(layers);
    let mut cur = x.to_vec();
    let first_mask = match (&mut dropout, drop_input) {
        (Some(d), true) => Some(d.mask(cur.len())),
        _ => None,
    };
    if let Some(m) = &first_mask {
        cur.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
    masks.push(first_mask);
    let mut output = 0.0;
    for (k, (w, b)) in offsets.into_iter().enumerate() {
        let (n_in, n_out) = (sizes[k], sizes[k + 1]);
        let mut z = vec![0.0; n_out];
        affine(&params[w..w + n_in * n_out], &params[b..b + n_out], &cur, &mut z);
        inputs.push(std::mem::take(&mut cur));
        if k + 1 == layers {
            output = sigmoid(z[0]);
        } else {
            z.iter_mut().for_each(|v| *v = v.tanh());
            hidden.push(z.clone());
            let m = dropout.as_mut().map(|d| d.mask(n_out));
            if let Some(m) = &m {
                z.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            masks.push(m);
            cur = z;
        }
    }
    DenseTrace {
        inputs,
        hidden,
        masks,
        output,
    }
}

/// Backpropagates `d_out = dL/d(output)`; returns `dL/dx` for the stack's
/// original (pre-dropout) input.
pub(crate) fn dense_backward(
    sizes: &[usize],
    params: &[f64],
    start: usize,
    trace: &DenseTrace,
    d_out: f64,
    grad: &mut [f64],
) -> Vec<f64> {
    let offsets = dense_offsets(sizes, start);
    let layers = offsets.len();
    let mut delta = vec![d_out * trace.output * (1.0 - trace.output)];
    for k in (0..layers).rev() {
        let (w, b) = offsets[k];
        let (n_in, n_out) = (sizes[k], sizes[k + 1]);
        let mut dx = vec![0.0; n_in];
        let (gw, gb) = grad[w..b + n_out].split_at_mut(n_in * n_out);
        affine_backward(
            &params[w..w + n_in * n_out],
            &trace.inputs[k],
            &delta,
            gw,
            gb,
            Some(&mut dx),
        );
        if let Some(m) = &trace.masks[k] {
            dx.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        if k > 0 {
            let h = &trace.hidden[k - 1];
            dx.iter_mut().zip(h).for_each(|(v, a)| *v *= 1.0 - a * a);
        }
        delta = dx;
    }
    delta
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut params = vec![0.0; dense_param_count(&sizes)];
        init_dense(rng, &sizes, &mut params, 0);
        Self { sizes, params }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        dense_forward(&self.sizes, &self.params, 0, x, None, false).output
    }

    /// Output and accumulated `d (output - target)^2 * scale / d params`.
    pub(crate) fn accumulate_gradient(
        &self,
        x: &[f64],
        target: f64,
        scale: f64,
        dropout: Option<&mut Dropout<'_>>,
        grad: &mut [f64],
    ) -> f64 {
        let trace = dense_forward(&self.sizes, &self.params, 0, x, dropout, false);
        let d_out = 2.0 * (trace.output - target) * scale;
        dense_backward(&self.sizes, &self.params, 0, &trace, d_out, grad);
        trace.output
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn shapes_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::new(3, &[4, 2], &mut rng);
        assert_eq!(m.sizes, vec![3, 4, 2, 1]);
        assert_eq!(m.params.len(), 3 * 4 + 4 + 4 * 2 + 2 + 2 + 1);
        let y = m.predict(&[0.1, -0.3, 2.0]);
        assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn zero_network_outputs_half() {
        let m = Mlp {
            sizes: vec![2, 3, 1],
            params: vec![0.0; dense_param_count(&[2, 3, 1])],
        };
        assert_eq!(m.predict(&[0.0, 0.0]), 0.5);
        let mut g = vec![0.0; m.params.len()];
        m.accumulate_gradient(&[0.0, 0.0], 1.0, 1.0, None, &mut g);
        // Only the output bias sees a gradient: 2 (0.5 - 1) * 0.25.
        let last = g.len() - 1;
        assert_eq!(g[last], -0.25);
        assert!(g[..last].iter().all(|v| *v == 0.0));
    }
}
