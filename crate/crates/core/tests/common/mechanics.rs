//! Measurements of the DPSGD mechanics against the naive network oracle.

use dptune::datasets::{synthetic, Dataset};
use dptune::dpsgd::{Activation, Mlp};
use dptune::dpsgd::surrogate::{surrogate_mse, surrogate_mse_gradient, surrogate_net};
use dptune::dpsgd::{apply_noisy_update, train_observed, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::nets;

fn rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    nets::norm(&diff) / nets::norm(b).max(1e-12)
}

/// Worst relative L2 error of the per-sample gradients of a 2-8-3 tanh net,
/// against central differences of the per-sample loss and against explicit
/// backprop.
pub fn per_sample_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes = [2, 8, 3];
    let net = Mlp::glorot(&sizes, Activation::Tanh, &mut rng).unwrap();
    let n = 6;
    let x: Vec<f64> = (0..n * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let grads = net.per_sample_gradients(&x, &y).unwrap();
    let p = net.params();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let xi = &x[2 * i..2 * i + 2];
        let fd: Vec<f64> = (0..p.len())
            .map(|k| {
                let mut up = p.clone();
                let mut dn = p.clone();
                up[k] += h;
                dn[k] -= h;
                (nets::cross_entropy(&sizes, &up, xi, y[i]) - nets::cross_entropy(&sizes, &dn, xi, y[i])) / (2.0 * h)
            })
            .collect();
        let explicit = nets::sample_gradient(&sizes, &p, xi, y[i]);
        worst = worst.max(rel(&grads[i], &fd)).max(rel(&grads[i], &explicit));
    }
    worst
}

/// Relative L2 error of the surrogate MSE gradient against central differences.
pub fn surrogate_gradient_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = surrogate_net(8, seed).unwrap();
    let inputs: Vec<[f64; 2]> = (0..12).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let targets: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = surrogate_mse_gradient(&net, &inputs, &targets).unwrap();
    let p = net.params();
    let h = 1e-5;
    let fd: Vec<f64> = (0..p.len())
        .map(|k| {
            let mut q = p.clone();
            q[k] = p[k] + h;
            net.set_params(&q).unwrap();
            let up = surrogate_mse(&net, &inputs, &targets).unwrap();
            q[k] = p[k] - h;
            net.set_params(&q).unwrap();
            let dn = surrogate_mse(&net, &inputs, &targets).unwrap();
            (up - dn) / (2.0 * h)
        })
        .collect();
    rel(&g, &fd)
}

pub fn small_task(seed: u64, n: usize) -> (Dataset, Dataset) {
    let all = synthetic(n + 20, 4, 3, 2.0, seed).unwrap();
    let idx: Vec<usize> = (0..all.len()).collect();
    (all.select(&idx[..n]), all.select(&idx[n..]))
}

/// Max absolute parameter difference after `steps` noiseless, unclipped
/// steps, against minibatch SGD replayed on the same batches.
pub fn vanilla_sgd_error(seed: u64) -> (f64, u64) {
    let (train, valid) = small_task(seed, 50);
    let sizes = [4, 6, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Mlp::glorot(&sizes, Activation::Tanh, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 10,
        clip_norm: f64::INFINITY,
        sigma: 0.0,
        eta: 0.3,
        seed,
        delta: 1e-5,
    };
    let mut batches = Vec::new();
    let out = train_observed(&init, &train, &valid, &cfg, &mut |r| batches.push(r.batch.to_vec())).unwrap();
    let expect = nets::sgd(&sizes, &init.params(), &train.features, &train.labels, &batches, cfg.eta);
    (nets::max_abs_diff(&out.model.params(), &expect), out.steps_taken)
}

/// Ratio of the empirical per-coordinate update std to `eta*sigma*C/B`,
/// measured over `steps` updates of a zero clipped sum.
pub fn noise_std_ratio(seed: u64, steps: usize) -> f64 {
    let (sigma, clip, eta, batch) = (1.3, 0.7, 0.5, 4);
    let mut model = Mlp::zeros(&[3, 4, 2], Activation::Tanh).unwrap();
    let p = model.num_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s1, mut s2, mut count) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..steps {
        let before = model.params();
        let mut sum = vec![0.0; p];
        apply_noisy_update(&mut model, &mut sum, batch, sigma, clip, eta, &mut rng).unwrap();
        for (a, b) in model.params().iter().zip(&before) {
            let d = a - b;
            s1 += d;
            s2 += d * d;
            count += 1.0;
        }
    }
    let mean = s1 / count;
    let std = (s2 / count - mean * mean).sqrt();
    std / (eta * sigma * clip / batch as f64)
}

pub struct ClipAudit {
    pub steps: u64,
    /// Largest `clipped - C` seen; never positive when clipping holds.
    pub max_excess: f64,
    /// Worst relative gap between reported raw norms and oracle norms.
    pub raw_norm_error: f64,
    /// Samples whose raw norm exceeded `C`.
    pub clipped_samples: usize,
}

/// Trains with a small clip norm and checks every reported per-sample norm
/// against the oracle gradient of the pre-step parameters.
pub fn clip_audit(seed: u64) -> ClipAudit {
    let (train, valid) = small_task(seed, 60);
    let sizes = [4, 6, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Mlp::glorot(&sizes, Activation::Tanh, &mut rng).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        clip_norm: 0.3,
        sigma: 1.1,
        eta: 0.2,
        seed,
        delta: 1e-5,
    };
    let mut prev = init.params();
    let mut audit = ClipAudit {
        steps: 0,
        max_excess: f64::NEG_INFINITY,
        raw_norm_error: 0.0,
        clipped_samples: 0,
    };
    train_observed(&init, &train, &valid, &cfg, &mut |r| {
        for (k, &i) in r.batch.iter().enumerate() {
            let g = nets::sample_gradient(&sizes, &prev, train.row(i), train.labels[i]);
            let n = nets::norm(&g);
            audit.raw_norm_error = audit.raw_norm_error.max((r.raw_norms[k] - n).abs() / n.max(1e-300));
            audit.max_excess = audit.max_excess.max(r.clipped_norms[k] - cfg.clip_norm);
            if n > cfg.clip_norm {
                audit.clipped_samples += 1;
            }
        }
        audit.steps = r.step;
        prev = r.model.params();
    })
    .unwrap();
    audit
}
