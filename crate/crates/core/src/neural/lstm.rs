//! Stacked LSTM over a feature window, read out at the last step by a dense
//! tanh stack with a sigmoid output.
//!
//! Gate pre-activations are `z = W x_t + U h_{t-1} + b`, stacked in the order
//! input, forget, candidate, output:
//!
//! ```text
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c_t = f c_{t-1} + i g      h_t = o tanh(c_t)
//! ```

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{affine, affine_backward, init_uniform, sigmoid, Dropout};
use super::mlp::{dense_backward, dense_forward, dense_param_count, init_dense};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    /// Widths of the stacked recurrent layers.
    pub recurrent: Vec<usize>,
    /// Dense stack from the last recurrent width to the output.
    pub dense: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy)]
struct CellOffsets {
    w: usize,
    u: usize,
    b: usize,
    n_in: usize,
    units: usize,
}

struct StepTrace {
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
}

struct LayerTrace {
    /// Inputs `x_t` of this layer.
    xs: Vec<Vec<f64>>,
    /// `h_t`, with `hs[0]` the zero initial state.
    hs: Vec<Vec<f64>>,
    steps: Vec<StepTrace>,
}

impl Lstm {
    /// `hidden[..2]` (or `hidden[..1]`) become recurrent layers, the rest
    /// dense layers. The forget-gate bias starts at 1.
    pub fn new(input: usize, hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let split = hidden.len().min(2);
        let recurrent = hidden[..split].to_vec();
        let mut dense = vec![*recurrent.last().expect("nonempty hidden units")];
        dense.extend_from_slice(&hidden[split..]);
        dense.push(1);
        let mut net = Self {
            input,
            recurrent,
            dense,
            params: Vec::new(),
        };
        let cells = net.cells();
        let dense_start = net.dense_start();
        net.params = vec![0.0; dense_start + dense_param_count(&net.dense)];
        for c in &cells {
            init_uniform(rng, &mut net.params[c.w..c.w + 4 * c.units * c.n_in], c.n_in);
            init_uniform(rng, &mut net.params[c.u..c.u + 4 * c.units * c.units], c.units);
            let b = &mut net.params[c.b..c.b + 4 * c.units];
            b.fill(0.0);
            b[c.units..2 * c.units].fill(1.0);
        }
        init_dense(rng, &net.dense.clone(), &mut net.params, dense_start);
        net
    }

    fn cells(&self) -> Vec<CellOffsets> {
        let mut at = 0;
        let mut n_in = self.input;
        self.recurrent
            .iter()
            .map(|&units| {
                let w = at;
                let u = w + 4 * units * n_in;
                let b = u + 4 * units * units;
                at = b + 4 * units;
                let c = CellOffsets {
                    w,
                    u,
                    b,
                    n_in,
                    units,
                };
                n_in = units;
                c
            })
            .collect()
    }

    fn dense_start(&self) -> usize {
        self.cells().last().map_or(0, |c| c.b + 4 * c.units)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    fn run_layer(&self, c: CellOffsets, xs: Vec<Vec<f64>>) -> LayerTrace {
        let p = &self.params;
        let units = c.units;
        let mut hs = vec![vec![0.0; units]];
        let mut steps = Vec::with_capacity(xs.len());
        let mut c_prev = vec![0.0; units];
        for x in &xs {
            let mut z = vec![0.0; 4 * units];
            affine(&p[c.w..c.u], &p[c.b..c.b + 4 * units], x, &mut z);
            let h_prev = hs.last().unwrap();
            let mut rz = vec![0.0; 4 * units];
            affine(&p[c.u..c.b], &vec![0.0; 4 * units], h_prev, &mut rz);
            let mut gates = vec![0.0; 4 * units];
            for k in 0..4 * units {
                let v = z[k] + rz[k];
                gates[k] = if (2 * units..3 * units).contains(&k) {
                    v.tanh()
                } else {
                    sigmoid(v)
                };
            }
            let mut cell = vec![0.0; units];
            let mut tanh_c = vec![0.0; units];
            let mut h = vec![0.0; units];
            for k in 0..units {
                let (i, f, g, o) = (gates[k], gates[units + k], gates[2 * units + k], gates[3 * units + k]);
                cell[k] = f * c_prev[k] + i * g;
                tanh_c[k] = cell[k].tanh();
                h[k] = o * tanh_c[k];
            }
            c_prev = cell.clone();
            hs.push(h);
            steps.push(StepTrace {
                gates,
                c: cell,
                tanh_c,
            });
        }
        LayerTrace { xs, hs, steps }
    }

    fn forward(&self, window: &[&[f64]]) -> Vec<LayerTrace> {
        let mut traces = Vec::with_capacity(self.recurrent.len());
        let mut xs: Vec<Vec<f64>> = window.iter().map(|r| r.to_vec()).collect();
        for c in self.cells() {
            let t = self.run_layer(c, xs);
            xs = t.hs[1..].to_vec();
            traces.push(t);
        }
        traces
    }

    pub fn predict(&self, window: &[&[f64]]) -> f64 {
        let traces = self.forward(window);
        let last = traces.last().unwrap().hs.last().unwrap();
        dense_forward(&self.dense, &self.params, self.dense_start(), last, None, false).output
    }

    pub(crate) fn accumulate_gradient(
        &self,
        window: &[&[f64]],
        target: f64,
        scale: f64,
        dropout: Option<&mut Dropout<'_>>,
        grad: &mut [f64],
    ) -> f64 {
        let traces = self.forward(window);
        let last = traces.last().unwrap().hs.last().unwrap();
        let start = self.dense_start();
        let dense = dense_forward(&self.dense, &self.params, start, last, dropout, true);
        let d_out = 2.0 * (dense.output - target) * scale;
        let dh_last = dense_backward(&self.dense, &self.params, start, &dense, d_out, grad);

        let steps = window.len();
        let cells = self.cells();
        // dL/dh_t coming from above, for the top layer only at the last step.
        let mut dh_ext = vec![vec![0.0; *self.recurrent.last().unwrap()]; steps];
        dh_ext[steps - 1] = dh_last;
        for (l, c) in cells.iter().enumerate().rev() {
            dh_ext = self.layer_backward(*c, &traces[l], dh_ext, grad, l > 0);
        }
        dense.output
    }

    /// Backpropagation through time for one layer; returns `dL/dx_t`.
    fn layer_backward(
        &self,
        c: CellOffsets,
        t: &LayerTrace,
        dh_ext: Vec<Vec<f64>>,
        grad: &mut [f64],
        want_dx: bool,
    ) -> Vec<Vec<f64>> {
        let p = &self.params;
        let units = c.units;
        let steps = t.steps.len();
        let mut dx_all = vec![Vec::new(); steps];
        let mut dh_next = vec![0.0; units];
        let mut dc_next = vec![0.0; units];
        for s in (0..steps).rev() {
            let st = &t.steps[s];
            let c_prev: &[f64] = if s > 0 { &t.steps[s - 1].c } else { &[] };
            let mut dz = vec![0.0; 4 * units];
            for k in 0..units {
                let (i, f, g, o) = (st.gates[k], st.gates[units + k], st.gates[2 * units + k], st.gates[3 * units + k]);
                let dh = dh_ext[s][k] + dh_next[k];
                let d_o = dh * st.tanh_c[k];
                let dc = dh * o * (1.0 - st.tanh_c[k] * st.tanh_c[k]) + dc_next[k];
                let cp = if s > 0 { c_prev[k] } else { 0.0 };
                dz[k] = dc * g * i * (1.0 - i);
                dz[units + k] = dc * cp * f * (1.0 - f);
                dz[2 * units + k] = dc * i * (1.0 - g * g);
                dz[3 * units + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            {
                let (gw, rest) = grad[c.w..c.b + 4 * units].split_at_mut(c.u - c.w);
                let (gu, gb) = rest.split_at_mut(c.b - c.u);
                let mut dx = vec![0.0; c.n_in];
                affine_backward(&p[c.w..c.u], &t.xs[s], &dz, gw, gb, want_dx.then_some(&mut dx[..]));
                let mut dh = vec![0.0; units];
                let mut scratch = vec![0.0; 4 * units];
                affine_backward(&p[c.u..c.b], &t.hs[s], &dz, gu, &mut scratch, Some(&mut dh));
                dh_next = dh;
                if want_dx {
                    dx_all[s] = dx;
                }
            }
        }
        dx_all
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = Lstm::new(3, &[4, 5, 6], &mut rng);
        assert_eq!(n.recurrent, vec![4, 5]);
        assert_eq!(n.dense, vec![5, 6, 1]);
        let cell1 = 4 * 4 * 3 + 4 * 4 * 4 + 16;
        let cell2 = 4 * 5 * 4 + 4 * 5 * 5 + 20;
        assert_eq!(n.params.len(), cell1 + cell2 + 5 * 6 + 6 + 6 + 1);
        let rows = [[0.1, 0.2, 0.3], [0.0, -1.0, 0.5]];
        let w: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let y = n.predict(&w);
        assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn output_depends_only_on_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = Lstm::new(2, &[3], &mut rng);
        let a = [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]];
        let w: Vec<&[f64]> = a.iter().map(|r| &r[..]).collect();
        let y1 = n.predict(&w);
        let y2 = n.predict(&w[1..]);
        assert_ne!(y1, y2);
        assert_eq!(y1, n.predict(&w));
    }
}
