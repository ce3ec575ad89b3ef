//! DPSGD training of a small fixed-architecture MLP, plus the regression
//! network used as the surrogate by the reinforcement-learning search.
//!
//! An epoch draws one permutation of the training rows and walks it in
//! chunks of `batch_size` (the final chunk may be short). For every row in
//! the chunk the per-sample gradient is clipped to L2 norm `clip_norm`, the
//! clipped gradients are summed, Gaussian noise with standard deviation
//! `sigma * clip_norm` is added per coordinate and the parameters move by
//! `-eta * (sum + noise) / chunk_len`.
//!
//! The accountant is charged with `q = batch_size / train_size` for
//! `epochs * ceil(train_size / batch_size)` steps. Shuffled chunks are not
//! Poisson subsampling; `q` is used as the sampling rate nonetheless.

mod mlp;
pub mod surrogate;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use mlp::{Activation, Forward, Layer, Mlp};

use crate::accountant::{epsilon_of_run, MechanismParams, PrivacySpend};
use crate::datasets::{Dataset, VisitCounter};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// `f64::INFINITY` disables clipping.
    pub clip_norm: f64,
    pub sigma: f64,
    pub eta: f64,
    pub seed: u64,
    pub delta: f64,
}

impl TrainConfig {
    pub fn validate(&self, train_size: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > train_size {
            return bad(format!(
                "batch_size must be in 1..={train_size}, got {}",
                self.batch_size
            ));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip_norm must be > 0, got {}", self.clip_norm));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if self.sigma > 0.0 && !self.clip_norm.is_finite() {
            return bad("noise requires a finite clip_norm".into());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must be in (0, 1), got {}", self.delta));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, train_size: usize) -> u64 {
        train_size.div_ceil(self.batch_size) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean validation cross-entropy in nats.
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub epsilon: PrivacySpend,
    pub steps_taken: u64,
    pub visits: VisitCounter,
    /// A training loss or parameter went non-finite; training stopped there.
    pub diverged: bool,
    pub model: Mlp,
}

/// What the observer sees after each step.
pub struct StepReport<'a> {
    pub step: u64,
    /// Row positions in the training set.
    pub batch: &'a [usize],
    pub mean_loss: f64,
    pub raw_norms: &'a [f64],
    pub clipped_norms: &'a [f64],
    pub model: &'a Mlp,
}

/// Factor `min(1, clip_norm / norm)`; 1 for a zero gradient.
pub fn clip_factor(norm: f64, clip_norm: f64) -> f64 {
    if norm > clip_norm {
        // Rounding must never leave `norm * factor` above `clip_norm`.
        let mut factor = clip_norm / norm;
        while norm * factor > clip_norm {
            factor = factor.next_down();
        }
        factor
    } else {
        1.0
    }
}

/// Scales `grad` down to L2 norm `clip_norm` when it is longer.
pub fn clip(grad: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let c = clip_factor(norm, clip_norm);
    grad.iter().map(|g| g * c).collect()
}

/// Adds `N(0, (sigma * clip_norm)^2)` to every coordinate of the clipped
/// sum, then takes the step `-eta * sum / batch_len`.
pub fn apply_noisy_update<R: Rng + ?Sized>(
    model: &mut Mlp,
    clipped_sum: &mut [f64],
    batch_len: usize,
    sigma: f64,
    clip_norm: f64,
    eta: f64,
    rng: &mut R,
) -> Result<()> {
    if batch_len == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if sigma > 0.0 {
        let std = sigma * clip_norm;
        for g in clipped_sum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *g += std * z;
        }
    }
    model.add_scaled(clipped_sum, -eta / batch_len as f64)
}

/// One DPSGD update from already clipped per-sample gradients.
pub fn noisy_step<R: Rng + ?Sized>(
    model: &mut Mlp,
    clipped: &[Vec<f64>],
    sigma: f64,
    clip_norm: f64,
    eta: f64,
    rng: &mut R,
) -> Result<()> {
    let mut sum = vec![0.0; model.num_params()];
    for g in clipped {
        if g.len() != sum.len() {
            return Err(Error::Shape(format!(
                "gradient of length {} for {} parameters",
                g.len(),
                sum.len()
            )));
        }
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    apply_noisy_update(model, &mut sum, clipped.len(), sigma, clip_norm, eta, rng)
}

/// Mean cross-entropy and accuracy of `model` on `data`.
pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    const CHUNK: usize = 512;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let k = model.output_width();
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let fwd = model.forward(&data.features[start * data.dim..end * data.dim], end - start)?;
        let (_, losses) = model.cross_entropy_deltas(&fwd, &data.labels[start..end])?;
        loss += losses.iter().sum::<f64>();
        for (i, row) in fwd.outputs().chunks_exact(k).enumerate() {
            let pred = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0;
            if pred == data.labels[start + i] {
                correct += 1;
            }
        }
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Trains with DPSGD. Deterministic in `(model_init, data, cfg)`.
pub fn train(model_init: &Mlp, train_set: &Dataset, valid_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_observed(model_init, train_set, valid_set, cfg, &mut |_| {})
}

pub fn train_observed(
    model_init: &Mlp,
    train_set: &Dataset,
    valid_set: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepReport),
) -> Result<TrainOutcome> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
    }
    cfg.validate(train_set.len())?;
    if model_init.input_width() != train_set.dim || model_init.output_width() < train_set.num_classes {
        return Err(Error::Shape(format!(
            "model {:?} does not fit data of width {} with {} classes",
            model_init.sizes(),
            train_set.dim,
            train_set.num_classes
        )));
    }

    let n = train_set.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = model_init.clone();
    let mut visits = VisitCounter::new(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut inputs = Vec::with_capacity(cfg.batch_size * train_set.dim);
    let mut labels = Vec::with_capacity(cfg.batch_size);
    let mut steps = 0u64;
    let mut diverged = false;

    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            visits.record_visits(batch)?;
            inputs.clear();
            labels.clear();
            for &i in batch {
                inputs.extend_from_slice(train_set.row(i));
                labels.push(train_set.labels[i]);
            }
            let fwd = model.forward(&inputs, batch.len())?;
            let (delta, losses) = model.cross_entropy_deltas(&fwd, &labels)?;
            let deltas = model.backprop(&fwd, delta);
            let raw_norms: Vec<f64> = model
                .per_sample_sq_norms(&fwd, &deltas)
                .into_iter()
                .map(f64::sqrt)
                .collect();
            let factors: Vec<f64> = raw_norms.iter().map(|&r| clip_factor(r, cfg.clip_norm)).collect();
            let clipped_norms: Vec<f64> = raw_norms.iter().zip(&factors).map(|(r, c)| r * c).collect();
            let mut sum = model.weighted_gradient_sum(&fwd, &deltas, &factors);
            apply_noisy_update(&mut model, &mut sum, batch.len(), cfg.sigma, cfg.clip_norm, cfg.eta, &mut rng)?;
            steps += 1;

            let mean_loss = losses.iter().sum::<f64>() / batch.len() as f64;
            observer(&StepReport {
                step: steps,
                batch,
                mean_loss,
                raw_norms: &raw_norms,
                clipped_norms: &clipped_norms,
                model: &model,
            });
            if !mean_loss.is_finite() || !model.is_finite() {
                diverged = true;
                break 'epochs;
            }
        }
    }

    let (val_loss, val_accuracy) = if diverged {
        (f64::NAN, 0.0)
    } else {
        evaluate(&model, valid_set)?
    };
    let epsilon = if cfg.sigma > 0.0 {
        let q = cfg.batch_size as f64 / n as f64;
        epsilon_of_run(&MechanismParams::new(q, cfg.sigma, steps)?, cfg.delta)?
    } else {
        PrivacySpend::unbounded(cfg.delta)
    };
    Ok(TrainOutcome {
        val_loss,
        val_accuracy,
        epsilon,
        steps_taken: steps,
        visits,
        diverged: diverged || !val_loss.is_finite(),
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synthetic;

    #[test]
    fn clip_examples() {
        let g = vec![6.0, 8.0];
        let c = clip(&g, 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-12);
        assert_eq!(clip(&[0.3, 0.4], 1.0), vec![0.3, 0.4]);
        assert_eq!(clip(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
        assert_eq!(clip(&[3.0, 4.0], f64::INFINITY), vec![3.0, 4.0]);
    }

    #[test]
    fn zero_noise_step_is_clipped_mean_sgd() {
        let mut model = Mlp::zeros(&[2, 2], Activation::Tanh).unwrap();
        let grads = vec![vec![1.0; 6], vec![3.0; 6]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        noisy_step(&mut model, &grads, 0.0, 1.0, 0.5, &mut rng).unwrap();
        assert!(model.params().iter().all(|&p| p == -1.0));
        let before = model.clone();
        let mut tiny = model.clone();
        noisy_step(&mut tiny, &grads, 1.0, 1.0, 0.0, &mut rng).unwrap();
        assert_eq!(tiny, before);
    }

    #[test]
    fn full_batch_epoch_visits_each_sample_once() {
        let ds = synthetic(40, 4, 2, 3.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::glorot(&[4, 8, 2], Activation::Tanh, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 40,
            clip_norm: 1.0,
            sigma: 1.0,
            eta: 0.1,
            seed: 3,
            delta: 1e-5,
        };
        let out = train(&net, &ds, &ds, &cfg).unwrap();
        assert_eq!(out.steps_taken, 1);
        assert!(out.visits.counts.iter().all(|&c| c == 1));
        assert!(!out.diverged);
        let again = train(&net, &ds, &ds, &cfg).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig {
            epochs: 1,
            batch_size: 8,
            clip_norm: 1.0,
            sigma: 1.0,
            eta: 0.1,
            seed: 0,
            delta: 1e-5,
        };
        assert!(ok.validate(10).is_ok());
        assert!(TrainConfig { batch_size: 11, ..ok }.validate(10).is_err());
        assert!(TrainConfig { epochs: 0, ..ok }.validate(10).is_err());
        assert!(TrainConfig { clip_norm: 0.0, ..ok }.validate(10).is_err());
        assert!(TrainConfig { clip_norm: f64::INFINITY, ..ok }.validate(10).is_err());
        assert!(TrainConfig { clip_norm: f64::INFINITY, sigma: 0.0, ..ok }.validate(10).is_ok());
        assert!(TrainConfig { eta: 0.0, ..ok }.validate(10).is_err());
        assert_eq!(ok.steps_per_epoch(10), 2);
    }

    #[test]
    fn non_private_run_reports_unbounded_epsilon() {
        let ds = synthetic(20, 3, 2, 3.0, 0).unwrap();
        let net = Mlp::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 5,
            clip_norm: f64::INFINITY,
            sigma: 0.0,
            eta: 0.1,
            seed: 0,
            delta: 1e-5,
        };
        let out = train(&net, &ds, &ds, &cfg).unwrap();
        assert_eq!(out.epsilon.epsilon, f64::INFINITY);
        assert_eq!(out.steps_taken, 4);
    }

    #[test]
    fn huge_learning_rate_diverges_without_error() {
        let ds = synthetic(32, 3, 2, 3.0, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::glorot(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            clip_norm: 1.0,
            sigma: 1.0,
            eta: 1e308,
            seed: 0,
            delta: 1e-5,
        };
        let out = train(&net, &ds, &ds, &cfg).unwrap();
        assert!(out.diverged);
        assert!(out.steps_taken < 24);
    }
}
