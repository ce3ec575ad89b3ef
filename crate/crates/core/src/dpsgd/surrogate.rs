//! Reward-regression network over `(sigma, eta)`, with both coordinates
//! normalized and centered to `[-1, 1]`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::search_space::{HyperParams, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateFitConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for SurrogateFitConfig {
    fn default() -> Self {
        SurrogateFitConfig {
            hidden: 32,
            epochs: 1000,
            batch_size: 8,
            learning_rate: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_mse: f64,
    pub final_mse: f64,
}

/// Surrogate input for a point: normalized coordinates mapped to `[-1, 1]`.
pub fn surrogate_features(space: &SearchSpace, hp: &HyperParams) -> [f64; 2] {
    space.normalize(hp).map(|u| 2.0 * u - 1.0)
}

/// `2 -> hidden -> 1` tanh network with Glorot initialization.
pub fn surrogate_net(hidden: usize, seed: u64) -> Result<Mlp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::glorot(&[2, hidden, 1], Activation::Tanh, &mut rng)
}

fn check_pairs(net: &Mlp, inputs: &[[f64; 2]], targets: &[f64]) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} inputs for {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if net.input_width() != 2 || net.output_width() != 1 {
        return Err(Error::Shape(format!("surrogate must be 2 -> ... -> 1, got {:?}", net.sizes())));
    }
    Ok(())
}

fn flatten(inputs: &[[f64; 2]]) -> Vec<f64> {
    inputs.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Mean squared error of the network on the pairs.
pub fn surrogate_mse(net: &Mlp, inputs: &[[f64; 2]], targets: &[f64]) -> Result<f64> {
    check_pairs(net, inputs, targets)?;
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let fwd = net.forward(&flatten(inputs), inputs.len())?;
    Ok(fwd
        .outputs()
        .iter()
        .zip(targets)
        .map(|(y, t)| (y - t).powi(2))
        .sum::<f64>()
        / inputs.len() as f64)
}

/// Gradient of [`surrogate_mse`] in flattened parameter order.
pub fn surrogate_mse_gradient(net: &Mlp, inputs: &[[f64; 2]], targets: &[f64]) -> Result<Vec<f64>> {
    check_pairs(net, inputs, targets)?;
    let n = inputs.len();
    if n == 0 {
        return Ok(vec![0.0; net.num_params()]);
    }
    let fwd = net.forward(&flatten(inputs), n)?;
    let delta: Vec<f64> = fwd
        .outputs()
        .iter()
        .zip(targets)
        .map(|(y, t)| 2.0 * (y - t))
        .collect();
    let deltas = net.backprop(&fwd, delta);
    Ok(net.weighted_gradient_sum(&fwd, &deltas, &vec![1.0 / n as f64; n]))
}

/// Plain minibatch SGD on the mean squared error. Returns the parameters
/// with the lowest full-data MSE seen (the starting point included), so the
/// final MSE never exceeds the initial one.
pub fn surrogate_fit(
    net: &Mlp,
    inputs: &[[f64; 2]],
    targets: &[f64],
    cfg: &SurrogateFitConfig,
    seed: u64,
) -> Result<(Mlp, FitReport)> {
    check_pairs(net, inputs, targets)?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("surrogate fit needs at least one pair".into()));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("surrogate batch_size and learning_rate must be positive".into()));
    }
    let initial_mse = surrogate_mse(net, inputs, targets)?;
    let mut best = (initial_mse, net.clone());
    let mut current = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut batch_in = Vec::with_capacity(cfg.batch_size);
    let mut batch_t = Vec::with_capacity(cfg.batch_size);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_in.clear();
            batch_t.clear();
            for &i in chunk {
                batch_in.push(inputs[i]);
                batch_t.push(targets[i]);
            }
            let grad = surrogate_mse_gradient(&current, &batch_in, &batch_t)?;
            current.add_scaled(&grad, -cfg.learning_rate)?;
        }
        let mse = surrogate_mse(&current, inputs, targets)?;
        if mse < best.0 {
            best = (mse, current.clone());
        }
    }
    let (final_mse, fitted) = best;
    Ok((
        fitted,
        FitReport {
            initial_mse,
            final_mse,
        },
    ))
}

/// Surrogate predictions over the lattice, row-major with sigma rows and
/// eta columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub sigma_indices: Vec<usize>,
    pub eta_indices: Vec<usize>,
    pub sigma_values: Vec<f64>,
    pub eta_values: Vec<f64>,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn rows(&self) -> usize {
        self.sigma_indices.len()
    }

    pub fn cols(&self) -> usize {
        self.eta_indices.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols() + col]
    }

    /// `(row, col)` of the largest prediction; the first one on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols(), best % self.cols())
    }
}

/// Predicts the reward over the lattice, or over an equally spaced subset
/// with `resolution` points per dimension when that is smaller.
pub fn surrogate_predict_grid(net: &Mlp, space: &SearchSpace, resolution: [usize; 2]) -> Result<Heatmap> {
    let sigma_indices = space.sigma.spaced_indices(resolution[0].clamp(1, space.sigma.len()));
    let eta_indices = space.eta.spaced_indices(resolution[1].clamp(1, space.eta.len()));
    let mut inputs = Vec::with_capacity(sigma_indices.len() * eta_indices.len() * 2);
    for &i in &sigma_indices {
        for &j in &eta_indices {
            let p = surrogate_features(space, &space.point_at(i, j));
            inputs.extend_from_slice(&p);
        }
    }
    let values = net.forward(&inputs, inputs.len() / 2)?.outputs().to_vec();
    Ok(Heatmap {
        sigma_values: sigma_indices.iter().map(|&i| space.sigma.value_at(i)).collect(),
        eta_values: eta_indices.iter().map(|&j| space.eta.value_at(j)).collect(),
        sigma_indices,
        eta_indices,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_is_interpolated() {
        let net = surrogate_net(8, 1).unwrap();
        let cfg = SurrogateFitConfig {
            epochs: 2000,
            ..Default::default()
        };
        let (_, report) = surrogate_fit(&net, &[[0.3, 0.7]], &[0.62], &cfg, 0).unwrap();
        assert!(report.final_mse < 1e-4, "{report:?}");
    }

    #[test]
    fn constant_targets_drive_the_output_bias() {
        let net = Mlp::zeros(&[2, 4, 1], Activation::Tanh).unwrap();
        let inputs: Vec<[f64; 2]> = (0..10).map(|i| [i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        let cfg = SurrogateFitConfig {
            epochs: 500,
            ..Default::default()
        };
        let (fitted, report) = surrogate_fit(&net, &inputs, &[0.4; 10], &cfg, 0).unwrap();
        assert!(report.final_mse < 1e-10);
        assert!((fitted.layers[1].bias[0] - 0.4).abs() < 1e-5);
    }

    #[test]
    fn zero_net_predicts_a_constant_map() {
        let net = Mlp::zeros(&[2, 4, 1], Activation::Tanh).unwrap();
        let space = SearchSpace::default();
        let map = surrogate_predict_grid(&net, &space, [7, 5]).unwrap();
        assert_eq!((map.rows(), map.cols()), (7, 5));
        assert!(map.values.iter().all(|&v| v == 0.0));
        assert_eq!(map.argmax(), (0, 0));
    }

    #[test]
    fn fit_never_worsens() {
        let net = surrogate_net(6, 3).unwrap();
        let inputs: Vec<[f64; 2]> = (0..25).map(|i| [(i % 5) as f64 / 4.0, (i / 5) as f64 / 4.0]).collect();
        let targets: Vec<f64> = inputs.iter().map(|p| (3.0 * p[0]).sin() * p[1]).collect();
        for lr in [1e-4, 0.1, 50.0] {
            let cfg = SurrogateFitConfig {
                epochs: 20,
                learning_rate: lr,
                ..Default::default()
            };
            let (_, r) = surrogate_fit(&net, &inputs, &targets, &cfg, 1).unwrap();
            assert!(r.final_mse <= r.initial_mse);
        }
    }
}
