//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! Fixed activation scheme: tanh on every hidden layer, identity on the
//! output layer. Weights are stored row-major (`weights[o * in_dim + i]` is
//! the connection from input `i` to output `o`), which keeps the forward
//! pass a plain dot-product loop and the backward pass allocation-light.

use alloc::vec;
use alloc::vec::Vec;

use super::rng::Rng;

/// One affine layer, `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major, `out_dim * in_dim` entries.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        assert!(in_dim >= 1 && out_dim >= 1, "layer dims must be >= 1");
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.in_dim);
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x.iter()) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Feed-forward network: tanh hidden layers, identity output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Activations recorded by [`MlpParams::forward_trace`].
/// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output
/// (post-tanh for hidden layers).
#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub activations: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }
}

/// Gradients produced by one backward pass, plus the gradient with respect
/// to the network input (needed when the input itself is being optimized).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    /// `weights[l]` is aligned with `MlpParams.layers[l].weights`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGrads {
            weights: params.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            input: vec![0.0; params.in_dim()],
        }
    }

    /// `self += c * other`, elementwise across all fields.
    pub fn add_scaled(&mut self, other: &MlpGrads, c: f64) {
        for (a, b) in self.weights.iter_mut().zip(other.weights.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += c * y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(other.biases.iter()) {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += c * y;
            }
        }
        for (x, y) in self.input.iter_mut().zip(other.input.iter()) {
            *x += c * y;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            for x in v.iter_mut() {
                *x *= c;
            }
        }
        for x in self.input.iter_mut() {
            *x *= c;
        }
    }
}

impl MlpParams {
    /// All-zero parameters for the layer widths in `dims`
    /// (`dims = [in, h1, ..., out]`, so at least two entries).
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need input and output widths");
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        MlpParams { layers }
    }

    /// Random init: `w ~ N(0, 1/in_dim)` per layer, biases zero.
    pub fn random(dims: &[usize], rng: &mut Rng) -> Self {
        let mut params = Self::zeros(dims);
        for layer in params.layers.iter_mut() {
            let scale = 1.0 / libm::sqrt(layer.in_dim as f64);
            for w in layer.weights.iter_mut() {
                *w = scale * rng.next_standard_normal();
            }
        }
        params
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("network has layers").in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("network has layers").out_dim
    }

    /// Layer widths `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Internal consistency check; `Err` names the first malformed layer.
    /// Useful when parameters came from a file rather than a constructor.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.layers.is_empty() {
            return Err("network has no layers");
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err("adjacent layer widths disagree");
            }
        }
        for l in &self.layers {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err("layer has zero width");
            }
            if l.weights.len() != l.out_dim * l.in_dim || l.bias.len() != l.out_dim {
                return Err("layer buffer lengths disagree with declared dims");
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err("layer contains non-finite values");
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).activations.pop().expect("output activation")
    }

    /// Forward pass that records every activation for a later backward pass.
    pub fn forward_trace(&self, x: &[f64]) -> MlpTrace {
        assert_eq!(x.len(), self.in_dim(), "input length must match in_dim");
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let mut buf = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(activations.last().expect("non-empty"), &mut buf);
            if l < last {
                for v in buf.iter_mut() {
                    *v = libm::tanh(*v);
                }
            }
            activations.push(buf.clone());
        }
        MlpTrace { activations }
    }

    /// Exact gradients of `upstream · output` with respect to every weight,
    /// bias, and the input, reusing the activations in `trace`.
    pub fn backward(&self, trace: &MlpTrace, upstream: &[f64]) -> MlpGrads {
        assert_eq!(trace.activations.len(), self.layers.len() + 1, "trace/network mismatch");
        assert_eq!(upstream.len(), self.out_dim(), "upstream length must match out_dim");

        let mut grads = MlpGrads::zeros_like(self);
        // Output layer is identity, so the first delta is the upstream as-is.
        let mut delta = upstream.to_vec();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];

            for (o, &d) in delta.iter().enumerate() {
                let gw = &mut grads.weights[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xi) in gw.iter_mut().zip(input.iter()) {
                    *g = d * xi;
                }
                grads.biases[l][o] = d;
            }

            // d(loss)/d(input of layer l) = W^T delta.
            let mut prev = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, w) in prev.iter_mut().zip(row.iter()) {
                    *p += w * d;
                }
            }

            if l == 0 {
                grads.input = prev;
            } else {
                // Layer l-1's output went through tanh; fold in 1 - a^2.
                let a = &trace.activations[l];
                delta = prev.iter().zip(a.iter()).map(|(p, ai)| p * (1.0 - ai * ai)).collect();
            }
        }
        grads
    }
}
