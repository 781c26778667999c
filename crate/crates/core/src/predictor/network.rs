//! Fully connected tanh network over a flat parameter vector, with
//! hand-written backpropagation.
//!
//! Layout for each layer `l` with `fan_in -> fan_out`: the weight matrix in
//! row-major order (`fan_out` rows of `fan_in`) followed by `fan_out` biases.
//! Hidden layers use `tanh`; the output layer is linear.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Layer widths, input first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub layers: Vec<usize>,
}

impl Architecture {
    pub fn new(layers: Vec<usize>) -> Self {
        assert!(layers.len() >= 2, "need at least input and output layers");
        Self { layers }
    }

    pub fn input_len(&self) -> usize {
        self.layers[0]
    }

    pub fn output_len(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// LeCun-normal weights, zero biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        for w in self.layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).unwrap();
            params.extend((0..fan_in * fan_out).map(|_| normal.sample(rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        params
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Reusable activations for one forward/backward pass.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// Post-activation values per layer, `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(arch: &Architecture) -> Self {
        Self {
            acts: arch.layers.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: arch.layers.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// Runs the network on `input`; the result is in `ws.output()`.
pub fn forward(arch: &Architecture, params: &[f64], input: &[f64], ws: &mut Workspace) {
    ws.acts[0].copy_from_slice(input);
    let mut offset = 0;
    let n_layers = arch.layers.len() - 1;
    for l in 0..n_layers {
        let (fan_in, fan_out) = (arch.layers[l], arch.layers[l + 1]);
        let weights = &params[offset..offset + fan_in * fan_out];
        let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        let (before, after) = ws.acts.split_at_mut(l + 1);
        let x = &before[l];
        let y = &mut after[0];
        for i in 0..fan_out {
            y[i] = biases[i] + dot(&weights[i * fan_in..(i + 1) * fan_in], x);
        }
        if l + 1 < n_layers {
            for v in y.iter_mut() {
                *v = v.tanh();
            }
        }
        offset += fan_in * fan_out + fan_out;
    }
}

/// Accumulates into `grad` the gradient of a loss whose derivative with
/// respect to the network output is `d_output`. Requires a preceding
/// [`forward`] on the same workspace.
pub fn backward(
    arch: &Architecture,
    params: &[f64],
    d_output: &[f64],
    ws: &mut Workspace,
    grad: &mut [f64],
) {
    let n_layers = arch.layers.len() - 1;
    ws.deltas[n_layers].copy_from_slice(d_output);
    let mut offsets = Vec::with_capacity(n_layers);
    let mut offset = 0;
    for l in 0..n_layers {
        offsets.push(offset);
        offset += arch.layers[l] * arch.layers[l + 1] + arch.layers[l + 1];
    }
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out) = (arch.layers[l], arch.layers[l + 1]);
        let off = offsets[l];
        let weights = &params[off..off + fan_in * fan_out];
        let (d_lo, d_hi) = ws.deltas.split_at_mut(l + 1);
        let delta_out = &d_hi[0];
        let x = &ws.acts[l];
        {
            let (gw, gb) =
                grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for i in 0..fan_out {
                let d = delta_out[i];
                if d != 0.0 {
                    axpy(d, x, &mut gw[i * fan_in..(i + 1) * fan_in]);
                }
                gb[i] += d;
            }
        }
        if l > 0 {
            let delta_in = &mut d_lo[l];
            delta_in.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..fan_out {
                let d = delta_out[i];
                if d != 0.0 {
                    axpy(d, &weights[i * fan_in..(i + 1) * fan_in], delta_in);
                }
            }
            // tanh'(z) = 1 - a^2
            for (dv, a) in delta_in.iter_mut().zip(&ws.acts[l]) {
                *dv *= 1.0 - a * a;
            }
        }
    }
}

/// Mean squared position error of one sample whose outputs are per-step
/// displacements accumulated into positions.
///
/// Returns the loss and writes `dL/d output` into `d_output`.
pub fn cumulative_position_loss(output: &[f64], target: &[f64], d_output: &mut [f64]) -> f64 {
    let steps = output.len() / 2;
    let norm = 1.0 / output.len() as f64;
    let (mut px, mut py) = (0.0, 0.0);
    let mut loss = 0.0;
    for t in 0..steps {
        px += output[2 * t];
        py += output[2 * t + 1];
        let ex = px - target[2 * t];
        let ey = py - target[2 * t + 1];
        loss += ex * ex + ey * ey;
        d_output[2 * t] = 2.0 * ex * norm;
        d_output[2 * t + 1] = 2.0 * ey * norm;
    }
    // Each displacement feeds every later position: suffix sums.
    for t in (0..steps.saturating_sub(1)).rev() {
        d_output[2 * t] += d_output[2 * t + 2];
        d_output[2 * t + 1] += d_output[2 * t + 3];
    }
    loss * norm
}

/// Mean loss and its gradient over a batch, for checks and tooling.
pub fn batch_loss_and_gradient(
    arch: &Architecture,
    params: &[f64],
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let mut ws = Workspace::new(arch);
    let mut grad = vec![0.0; params.len()];
    let mut d_out = vec![0.0; arch.output_len()];
    let mut loss = 0.0;
    let scale = 1.0 / inputs.len() as f64;
    for (x, y) in inputs.iter().zip(targets) {
        forward(arch, params, x, &mut ws);
        loss += cumulative_position_loss(ws.output(), y, &mut d_out);
        d_out.iter_mut().for_each(|g| *g *= scale);
        backward(arch, params, &d_out, &mut ws, &mut grad);
    }
    (loss * scale, grad)
}
