//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};

const PREC: usize = 512;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().expect("decimal rendering of a finite value")
}

fn binomial(n: u32, k: u32) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Per-step RDP of the sampled Gaussian at integer `order`, by direct
/// binomial summation in 512-bit arithmetic.
pub fn rdp_step_exact(q: f64, sigma: f64, order: u32, cc: &mut Consts) -> BigFloat {
    let one = big(1.0);
    let qb = big(q);
    let pb = one.sub(&qb, PREC, RM);
    let two_s2 = big(2.0).mul(&big(sigma), PREC, RM).mul(&big(sigma), PREC, RM);
    let mut sum = big(0.0);
    for k in 0..=order {
        let c = BigFloat::from_u128(binomial(order, k), PREC);
        let expo = big((k as f64) * (k as f64 - 1.0)).div(&two_s2, PREC, RM).exp(PREC, RM, cc);
        let term = c
            .mul(&pb.powi((order - k) as usize, PREC, RM), PREC, RM)
            .mul(&qb.powi(k as usize, PREC, RM), PREC, RM)
            .mul(&expo, PREC, RM);
        sum = sum.add(&term, PREC, RM);
    }
    sum.ln(PREC, RM, cc).div(&big(order as f64 - 1.0), PREC, RM)
}

/// `min over orders 2..=64 of steps * rdp + ln(1/delta) / (order - 1)`.
pub fn epsilon_exact(q: f64, sigma: f64, steps: u64, delta: f64) -> f64 {
    let mut cc = Consts::new().expect("constants cache");
    let log_inv_delta = big(delta).ln(PREC, RM, &mut cc).neg();
    let mut best: Option<BigFloat> = None;
    for order in 2..=64u32 {
        let eps = rdp_step_exact(q, sigma, order, &mut cc)
            .mul(&BigFloat::from_u64(steps, PREC), PREC, RM)
            .add(&log_inv_delta.div(&big(order as f64 - 1.0), PREC, RM), PREC, RM);
        best = match best {
            Some(b) if b.cmp(&eps).is_some_and(|c| c <= 0) => Some(b),
            _ => Some(eps),
        };
    }
    to_f64(&best.expect("at least one order"))
}

pub fn rdp_step_exact_f64(q: f64, sigma: f64, order: u32) -> f64 {
    let mut cc = Consts::new().expect("constants cache");
    to_f64(&rdp_step_exact(q, sigma, order, &mut cc))
}

/// Relative difference `|a - b| / |b|`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

pub mod formats;
pub mod mechanics;
pub mod nets;
pub mod tpe_oracle;

/// Small synthetic-data run config for ledger and CLI tests.
pub fn synthetic_config(strategy: &str, max_trials: usize, seed: u64) -> String {
    format!(
        r#"{{
  "dataset": {{"source": "synthetic", "n_train": 40, "n_valid": 20, "dim": 4, "classes": 3, "separation": 3.0}},
  "train": {{"epochs": 2, "batch_size": 8, "clip_norm": 1.0, "hidden": [4]}},
  "strategy": "{strategy}",
  "strategies": {{
    "grid": {{"per_dim": [3, 4]}},
    "rl": {{"trials_per_episode": 4, "surrogate": {{"epochs": 50}}}},
    "bayesian": {{"n_startup": 4}},
    "evolutionary": {{"population_size": 4}}
  }},
  "budget": {{"max_trials": {max_trials}}},
  "seed": {seed}
}}
"#
    )
}

/// `alpha_u * exp(-val_loss) + alpha_p * exp(-epsilon)` in 512-bit arithmetic.
pub fn reward_exact(val_loss: f64, epsilon: f64, alpha_u: f64, alpha_p: f64) -> f64 {
    let mut cc = Consts::new().expect("constants cache");
    let u = big(alpha_u).mul(&big(val_loss).neg().exp(PREC, RM, &mut cc), PREC, RM);
    let p = big(alpha_p).mul(&big(epsilon).neg().exp(PREC, RM, &mut cc), PREC, RM);
    to_f64(&u.add(&p, PREC, RM))
}
