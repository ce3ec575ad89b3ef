use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Dense layer, `weights` row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Fully connected network: hidden layers use `activation`, the last layer
/// is linear (logits for classification, the estimate for regression).
///
/// Flattened parameter order: for each layer in turn, its weights row-major
/// (`outputs x inputs`) followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Activations kept from a forward pass. `activations[0]` is the input
/// batch, `activations[l]` the input of layer `l`, and the last entry the
/// raw network outputs. All row-major `batch x width`.
#[derive(Debug, Clone)]
pub struct Forward {
    pub batch: usize,
    pub activations: Vec<Vec<f64>>,
}

impl Forward {
    pub fn outputs(&self) -> &[f64] {
        self.activations.last().expect("at least the input")
    }

    pub fn output_width(&self) -> usize {
        self.outputs().len() / self.batch.max(1)
    }

    /// Row-wise softmax of the outputs.
    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.output_width();
        let mut probs = self.outputs().to_vec();
        for row in probs.chunks_exact_mut(k) {
            softmax_in_place(row);
        }
        probs
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `-ln softmax(row)[label]`, computed stably.
pub(crate) fn cross_entropy(row: &[f64], label: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    lse - row[label]
}

impl Mlp {
    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have >= 2 positive entries, got {sizes:?}"
            )));
        }
        Ok(())
    }

    /// All-zero parameters.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activation,
        })
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, activation)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters given, network has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }

    /// `params += scale * direction`.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) -> Result<()> {
        if direction.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "update of length {} for {} parameters",
                direction.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p += scale * direction[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    /// Forward pass over `batch` row-major input rows.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<Forward> {
        let width = self.input_width();
        if inputs.len() != batch * width {
            return Err(Error::Shape(format!(
                "input of length {} is not {batch} rows of width {width}",
                inputs.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_vec());
        for (li, layer) in self.layers.iter().enumerate() {
            let input = activations.last().expect("pushed");
            let mut out = vec![0.0; batch * layer.outputs];
            for i in 0..batch {
                let x = &input[i * layer.inputs..(i + 1) * layer.inputs];
                let y = &mut out[i * layer.outputs..(i + 1) * layer.outputs];
                for (o, yo) in y.iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    let z = layer.bias[o] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    *yo = if li == last { z } else { self.activation.apply(z) };
                }
            }
            activations.push(out);
        }
        Ok(Forward { batch, activations })
    }

    /// Per-layer deltas `dLoss/dz` for every sample, given the deltas of the
    /// output layer.
    pub fn backprop(&self, fwd: &Forward, output_delta: Vec<f64>) -> Vec<Vec<f64>> {
        let n_layers = self.layers.len();
        let mut deltas = vec![Vec::new(); n_layers];
        deltas[n_layers - 1] = output_delta;
        for l in (1..n_layers).rev() {
            let layer = &self.layers[l];
            let a = &fwd.activations[l];
            let upper = &deltas[l];
            let mut lower = vec![0.0; fwd.batch * layer.inputs];
            for i in 0..fwd.batch {
                let d_up = &upper[i * layer.outputs..(i + 1) * layer.outputs];
                let d_low = &mut lower[i * layer.inputs..(i + 1) * layer.inputs];
                for (o, &d) in d_up.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (acc, wv) in d_low.iter_mut().zip(w) {
                        *acc += d * wv;
                    }
                }
                let a_row = &a[i * layer.inputs..(i + 1) * layer.inputs];
                for (acc, &av) in d_low.iter_mut().zip(a_row) {
                    *acc *= self.activation.derivative_from_output(av);
                }
            }
            deltas[l - 1] = lower;
        }
        deltas
    }

    /// Squared L2 norm of each sample's full gradient. A dense layer's
    /// per-sample weight gradient is the outer product `delta x input`, so
    /// its squared norm is `|delta|^2 * |input|^2`.
    pub fn per_sample_sq_norms(&self, fwd: &Forward, deltas: &[Vec<f64>]) -> Vec<f64> {
        let mut norms = vec![0.0; fwd.batch];
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &fwd.activations[l];
            for (i, n) in norms.iter_mut().enumerate() {
                let d = &deltas[l][i * layer.outputs..(i + 1) * layer.outputs];
                let x = &a[i * layer.inputs..(i + 1) * layer.inputs];
                let dd: f64 = d.iter().map(|v| v * v).sum();
                let xx: f64 = x.iter().map(|v| v * v).sum();
                *n += dd * (xx + 1.0);
            }
        }
        norms
    }

    /// `sum_i weights[i] * grad_i`, flattened in parameter order.
    pub fn weighted_gradient_sum(&self, fwd: &Forward, deltas: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        let mut at = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let a = &fwd.activations[l];
            let (gw, rest) = out[at..].split_at_mut(layer.weights.len());
            let gb = &mut rest[..layer.outputs];
            for (i, &c) in weights.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                let d = &deltas[l][i * layer.outputs..(i + 1) * layer.outputs];
                let x = &a[i * layer.inputs..(i + 1) * layer.inputs];
                for (o, &dv) in d.iter().enumerate() {
                    let s = c * dv;
                    if s == 0.0 {
                        continue;
                    }
                    gb[o] += s;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, xv) in row.iter_mut().zip(x) {
                        *g += s * xv;
                    }
                }
            }
            at += layer.num_params();
        }
        out
    }

    /// One explicit gradient vector per sample.
    pub fn per_sample_from_deltas(&self, fwd: &Forward, deltas: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..fwd.batch)
            .map(|i| {
                let mut g = Vec::with_capacity(self.num_params());
                for (l, layer) in self.layers.iter().enumerate() {
                    let d = &deltas[l][i * layer.outputs..(i + 1) * layer.outputs];
                    let x = &fwd.activations[l][i * layer.inputs..(i + 1) * layer.inputs];
                    for &dv in d {
                        g.extend(x.iter().map(|xv| dv * xv));
                    }
                    g.extend_from_slice(d);
                }
                g
            })
            .collect()
    }

    /// Output-layer deltas and per-sample losses for softmax cross-entropy.
    pub fn cross_entropy_deltas(&self, fwd: &Forward, labels: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let k = self.output_width();
        if labels.len() != fwd.batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {}",
                labels.len(),
                fwd.batch
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Shape(format!("label {bad} for {k} outputs")));
        }
        let mut delta = fwd.probabilities();
        let mut losses = Vec::with_capacity(fwd.batch);
        for (i, &y) in labels.iter().enumerate() {
            losses.push(cross_entropy(&fwd.outputs()[i * k..(i + 1) * k], y));
            delta[i * k + y] -= 1.0;
        }
        Ok((delta, losses))
    }

    /// Exact gradient of each sample's cross-entropy loss.
    pub fn per_sample_gradients(&self, inputs: &[f64], labels: &[usize]) -> Result<Vec<Vec<f64>>> {
        let fwd = self.forward(inputs, labels.len())?;
        let (delta, _) = self.cross_entropy_deltas(&fwd, labels)?;
        let deltas = self.backprop(&fwd, delta);
        Ok(self.per_sample_from_deltas(&fwd, &deltas))
    }

    /// Mean cross-entropy over a batch.
    pub fn mean_cross_entropy(&self, inputs: &[f64], labels: &[usize]) -> Result<f64> {
        let fwd = self.forward(inputs, labels.len())?;
        let (_, losses) = self.cross_entropy_deltas(&fwd, labels)?;
        Ok(losses.iter().sum::<f64>() / labels.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize) -> (Vec<f64>, Vec<usize>) {
        let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = (0..n).map(|_| rng.random_range(0..k)).collect();
        (x, y)
    }

    #[test]
    fn zero_net_gives_uniform_probabilities() {
        let net = Mlp::zeros(&[3, 5, 4], Activation::Tanh).unwrap();
        let fwd = net.forward(&[0.3, -1.0, 2.0, 1.0, 1.0, 1.0], 2).unwrap();
        for p in fwd.probabilities() {
            assert_eq!(p, 0.25);
        }
    }

    #[test]
    fn identity_linear_layer_passes_inputs() {
        let mut net = Mlp::zeros(&[1, 1], Activation::Tanh).unwrap();
        net.layers[0].weights[0] = 1.0;
        let fwd = net.forward(&[0.5, -2.0, 7.0], 3).unwrap();
        assert_eq!(fwd.outputs(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn probabilities_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::glorot(&[6, 16, 5], Activation::Sigmoid, &mut rng).unwrap();
        let (x, _) = random_batch(&mut rng, 40, 6, 5);
        let probs = net.forward(&x, 40).unwrap().probabilities();
        for row in probs.chunks_exact(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let net = Mlp::zeros(&[3, 2], Activation::Tanh).unwrap();
        assert!(matches!(net.forward(&[1.0; 5], 2), Err(Error::Shape(_))));
        assert!(net.per_sample_gradients(&[1.0; 6], &[0]).is_err());
        assert!(Mlp::zeros(&[3], Activation::Tanh).is_err());
    }

    #[test]
    fn fused_routes_agree_with_explicit_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::glorot(&[4, 7, 6, 3], Activation::Tanh, &mut rng).unwrap();
        let (x, y) = random_batch(&mut rng, 9, 4, 3);
        let fwd = net.forward(&x, 9).unwrap();
        let (delta, _) = net.cross_entropy_deltas(&fwd, &y).unwrap();
        let deltas = net.backprop(&fwd, delta);
        let explicit = net.per_sample_from_deltas(&fwd, &deltas);
        let norms = net.per_sample_sq_norms(&fwd, &deltas);
        for (g, n) in explicit.iter().zip(&norms) {
            let direct: f64 = g.iter().map(|v| v * v).sum();
            assert!((direct - n).abs() <= 1e-12 * direct.max(1.0));
        }
        let weights: Vec<f64> = (0..9).map(|i| 0.1 * i as f64).collect();
        let fused = net.weighted_gradient_sum(&fwd, &deltas, &weights);
        for p in 0..net.num_params() {
            let direct: f64 = explicit.iter().zip(&weights).map(|(g, c)| c * g[p]).sum();
            assert!((direct - fused[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::glorot(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let mut other = Mlp::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
        assert!(other.set_params(&[0.0; 3]).is_err());
    }
}
