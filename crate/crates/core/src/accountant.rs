//! Rényi-DP accounting for the subsampled Gaussian mechanism.
//!
//! Each DPSGD step is a Gaussian mechanism with noise multiplier `sigma`
//! applied to a fraction `q` of the data. Its integer-order RDP is
//!
//! ```text
//! rdp(a) = 1/(a-1) * ln( sum_{k=0..a} C(a,k) (1-q)^(a-k) q^k exp(k(k-1) / (2 sigma^2)) )
//! ```
//!
//! RDP composes additively over steps and converts to `(epsilon, delta)` via
//! `epsilon = min_a rdp(a) + ln(1/delta) / (a-1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orders `2..=64`.
pub fn default_orders() -> Vec<u32> {
    (2..=64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismParams {
    /// Sampling rate per step, `batch_size / train_size`.
    pub q: f64,
    pub sigma: f64,
    pub steps: u64,
}

impl MechanismParams {
    pub fn new(q: f64, sigma: f64, steps: u64) -> Result<Self> {
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::InvalidArgument(format!("q must be in (0, 1], got {q}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(MechanismParams { q, sigma, steps })
    }
}

/// Per-order RDP values in nats. Entries may be `+inf` when the order
/// overflowed; [`RdpCurve::to_epsilon`] skips them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdpCurve {
    pub orders: Vec<u32>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacySpend {
    pub epsilon: f64,
    pub delta: f64,
    /// Minimizing Rényi order; `None` for a non-private run.
    pub order: Option<u32>,
}

impl PrivacySpend {
    /// Spend of a run without noise.
    pub fn unbounded(delta: f64) -> Self {
        PrivacySpend {
            epsilon: f64::INFINITY,
            delta,
            order: None,
        }
    }
}

fn ln_binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (1..=k)
        .map(|i| ((n - k + i) as f64 / i as f64).ln())
        .sum()
}

/// RDP of one subsampled Gaussian step at integer order `order >= 2`.
///
/// Summed in log space. Returns `+inf` if the sum overflows.
pub fn rdp_step(q: f64, sigma: f64, order: u32) -> f64 {
    assert!(order >= 2, "Rényi order must be >= 2");
    if q <= 0.0 {
        return 0.0;
    }
    let alpha = order;
    let ln_q = q.ln();
    let ln_1mq = (-q).ln_1p();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);

    let mut terms = Vec::with_capacity(alpha as usize + 1);
    for k in 0..=alpha {
        let rest = alpha - k;
        // 0 * ln(0) is 0 here: the term with no (1-q) or q factor.
        let from_keep = if rest == 0 { 0.0 } else { rest as f64 * ln_1mq };
        let from_pick = if k == 0 { 0.0 } else { k as f64 * ln_q };
        let exponent = (k as f64) * (k as f64 - 1.0) * inv_two_var;
        let t = ln_binomial(alpha, k) + from_keep + from_pick + exponent;
        if t == f64::INFINITY || t.is_nan() {
            return f64::INFINITY;
        }
        terms.push(t);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    let value = (max + sum.ln()) / (alpha - 1) as f64;
    if value.is_finite() {
        value.max(0.0)
    } else {
        f64::INFINITY
    }
}

impl RdpCurve {
    /// Single-step curve over `orders`.
    pub fn for_step(q: f64, sigma: f64, orders: &[u32]) -> Self {
        RdpCurve {
            orders: orders.to_vec(),
            values: orders.iter().map(|&a| rdp_step(q, sigma, a)).collect(),
        }
    }

    /// Linear composition over `steps` identical steps.
    pub fn compose(&self, steps: u64) -> RdpCurve {
        let values = if steps == 0 {
            vec![0.0; self.values.len()]
        } else {
            self.values.iter().map(|v| v * steps as f64).collect()
        };
        RdpCurve {
            orders: self.orders.clone(),
            values,
        }
    }

    /// Converts to `(epsilon, delta)`, minimizing over the finite orders.
    pub fn to_epsilon(&self, delta: f64) -> Result<PrivacySpend> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must be in (0, 1), got {delta}")));
        }
        let penalty = (1.0 / delta).ln();
        let mut best: Option<(f64, u32)> = None;
        for (&order, &value) in self.orders.iter().zip(&self.values) {
            if !value.is_finite() {
                continue;
            }
            let eps = value + penalty / (order - 1) as f64;
            // Strict comparison keeps the lowest order on ties.
            if best.is_none_or(|(b, _)| eps < b) {
                best = Some((eps, order));
            }
        }
        let (epsilon, order) = best.ok_or(Error::NoFiniteOrder)?;
        log::debug!("epsilon {epsilon} at order {order} (delta {delta})");
        Ok(PrivacySpend {
            epsilon: epsilon.max(0.0),
            delta,
            order: Some(order),
        })
    }
}

/// Composed curve of a whole run over the default orders.
pub fn run_curve(params: &MechanismParams) -> RdpCurve {
    RdpCurve::for_step(params.q, params.sigma, &default_orders()).compose(params.steps)
}

/// Privacy loss of a full DPSGD run.
pub fn epsilon_of_run(params: &MechanismParams, delta: f64) -> Result<PrivacySpend> {
    run_curve(params).to_epsilon(delta)
}
