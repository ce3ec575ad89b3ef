//! Tree-structured Parzen estimator.
//!
//! After `n_startup` uniform draws, the history is split at the `gamma`
//! quantile of reward into a good set and a bad set. Each set gets one
//! truncated-Gaussian Parzen density per dimension, built in the dimension's
//! own scale and mixed with one broad prior kernel. Candidates are drawn
//! from the good density `l`, snapped to the lattice, and the one with the
//! largest `l(x) / g(x)` is evaluated.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::TrialRunner;
use crate::error::{Error, Result};
use crate::search_space::{Dimension, HyperParams, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Kernel std is the larger gap to the neighboring distinct observed
    /// values (range ends count as neighbors), floored at
    /// `(hi - lo) / lattice_size`. Repeated values share one bandwidth.
    #[default]
    AdjacentGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TpeConfig {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    pub bandwidth: BandwidthRule,
    /// Weight of the broad prior kernel in both densities, relative to one
    /// observation; 0 disables it.
    pub prior_weight: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
            bandwidth: BandwidthRule::AdjacentGap,
            prior_weight: 1.0,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("bayesian: {m}")));
        if self.n_startup == 0 {
            return bad("n_startup must be >= 1");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if self.n_candidates == 0 {
            return bad("n_candidates must be >= 1");
        }
        if !(self.prior_weight >= 0.0 && self.prior_weight.is_finite()) {
            return bad("prior_weight must be finite and >= 0");
        }
        Ok(())
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Weighted mixture of Gaussians truncated to `[lo, hi]`, in domain units.
/// With no kernels it is the uniform density on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParzenEstimator {
    pub centers: Vec<f64>,
    pub bandwidths: Vec<f64>,
    pub weights: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl ParzenEstimator {
    pub fn uniform(lo: f64, hi: f64) -> Self {
        ParzenEstimator {
            centers: Vec::new(),
            bandwidths: Vec::new(),
            weights: Vec::new(),
            lo,
            hi,
        }
    }

    /// Unit-weight kernels at `observations` (domain units), plus a prior
    /// kernel at the range midpoint with std equal to the range width and
    /// weight `prior_weight` (omitted when zero).
    pub fn fit(observations: &[f64], dim: &Dimension, rule: BandwidthRule, prior_weight: f64) -> Self {
        let lo = dim.domain_lo();
        let hi = dim.domain_hi();
        let width = hi - lo;
        let BandwidthRule::AdjacentGap = rule;
        let floor = if width > 0.0 { width / dim.len() as f64 } else { 1.0 };

        let mut centers: Vec<f64> = observations.to_vec();
        centers.sort_by(|a, b| a.partial_cmp(b).expect("finite observations"));
        // Neighbors are the adjacent distinct values; the range ends count as
        // neighbors of the extremes.
        let mut distinct = centers.clone();
        distinct.dedup();
        let mut bandwidths: Vec<f64> = centers
            .iter()
            .map(|&c| {
                let i = distinct.partition_point(|&d| d < c);
                let left = if i == 0 { lo } else { distinct[i - 1] };
                let right = if i + 1 == distinct.len() { hi } else { distinct[i + 1] };
                (c - left).max(right - c).max(floor)
            })
            .collect();
        let mut weights = vec![1.0; centers.len()];
        if prior_weight > 0.0 {
            centers.push(0.5 * (lo + hi));
            bandwidths.push(if width > 0.0 { width } else { 1.0 });
            weights.push(prior_weight);
        }
        ParzenEstimator {
            centers,
            bandwidths,
            weights,
            lo,
            hi,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        if self.centers.is_empty() {
            let width = self.hi - self.lo;
            return if width > 0.0 { 1.0 / width } else { 1.0 };
        }
        let mut total = 0.0;
        for ((&c, &s), &w) in self.centers.iter().zip(&self.bandwidths).zip(&self.weights) {
            let mass = std_normal_cdf((self.hi - c) / s) - std_normal_cdf((self.lo - c) / s);
            let z = (x - c) / s;
            let density = (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            total += w * density / mass.max(f64::MIN_POSITIVE);
        }
        total / self.weights.iter().sum::<f64>()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        self.pdf(x).max(f64::MIN_POSITIVE).ln()
    }

    /// One draw in domain units.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.centers.is_empty() {
            return if self.hi > self.lo { rng.random_range(self.lo..=self.hi) } else { self.lo };
        }
        let mut pick = rng.random::<f64>() * self.weights.iter().sum::<f64>();
        let mut k = 0;
        while k + 1 < self.weights.len() && pick >= self.weights[k] {
            pick -= self.weights[k];
            k += 1;
        }
        let (c, s) = (self.centers[k], self.bandwidths[k]);
        for _ in 0..64 {
            let z: f64 = StandardNormal.sample(rng);
            let x = c + s * z;
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        c.clamp(self.lo, self.hi)
    }
}

/// Good and bad densities for both dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct TpeModel {
    pub good: [ParzenEstimator; 2],
    pub bad: [ParzenEstimator; 2],
}

impl TpeModel {
    /// `None` when every reward in the history is equal (nothing to model).
    pub fn build(space: &SearchSpace, history: &[(HyperParams, f64)], cfg: &TpeConfig) -> Option<Self> {
        let first = history.first()?.1;
        if history.iter().all(|(_, r)| *r == first) {
            return None;
        }
        // Stable: equal rewards keep trial order.
        let mut ranked: Vec<&(HyperParams, f64)> = history.iter().collect();
        ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        let n_good = ((cfg.gamma * history.len() as f64).ceil() as usize).clamp(1, history.len());
        let (good, bad) = ranked.split_at(n_good);

        let dims = space.dims();
        let build = |set: &[&(HyperParams, f64)], k: usize| {
            let dim = dims[k];
            if set.is_empty() {
                return ParzenEstimator::uniform(dim.domain_lo(), dim.domain_hi());
            }
            let values: Vec<f64> = set.iter().map(|(p, _)| dim.to_domain(p.as_array()[k])).collect();
            ParzenEstimator::fit(&values, dim, cfg.bandwidth, cfg.prior_weight)
        };
        Some(TpeModel {
            good: [build(good, 0), build(good, 1)],
            bad: [build(bad, 0), build(bad, 1)],
        })
    }

    /// `ln l(x) - ln g(x)` summed over dimensions.
    pub fn log_ratio(&self, space: &SearchSpace, hp: &HyperParams) -> f64 {
        let dims = space.dims();
        let values = hp.as_array();
        (0..2)
            .map(|k| {
                let d = dims[k].to_domain(values[k]);
                self.good[k].log_pdf(d) - self.bad[k].log_pdf(d)
            })
            .sum()
    }

    /// A lattice point drawn from the good density.
    pub fn sample_good<R: Rng + ?Sized>(&self, space: &SearchSpace, rng: &mut R) -> HyperParams {
        let dims = space.dims();
        let mut out = [0.0; 2];
        for k in 0..2 {
            out[k] = dims[k].snap(dims[k].from_domain(self.good[k].sample(rng)));
        }
        HyperParams::from_array(out)
    }
}

/// One proposal with its scored candidate set.
#[derive(Debug, Clone, PartialEq)]
pub struct TpeSuggestion {
    pub candidates: Vec<HyperParams>,
    /// `ln l - ln g` per candidate; empty for uniform proposals.
    pub log_ratios: Vec<f64>,
    pub chosen: usize,
    pub model: Option<TpeModel>,
}

impl TpeSuggestion {
    pub fn point(&self) -> HyperParams {
        self.candidates[self.chosen]
    }

    pub fn is_uniform(&self) -> bool {
        self.model.is_none()
    }
}

/// `ln l - ln g` per candidate and the index of the first maximum.
pub fn score_candidates(model: &TpeModel, space: &SearchSpace, candidates: &[HyperParams]) -> (Vec<f64>, usize) {
    let log_ratios: Vec<f64> = candidates.iter().map(|c| model.log_ratio(space, c)).collect();
    let mut chosen = 0;
    for (i, r) in log_ratios.iter().enumerate() {
        if *r > log_ratios[chosen] {
            chosen = i;
        }
    }
    (log_ratios, chosen)
}

/// Next point given the `(point, reward)` history in trial order.
pub fn suggest<R: Rng + ?Sized>(
    space: &SearchSpace,
    cfg: &TpeConfig,
    history: &[(HyperParams, f64)],
    rng: &mut R,
) -> TpeSuggestion {
    let model = if history.len() < cfg.n_startup {
        None
    } else {
        TpeModel::build(space, history, cfg)
    };
    let Some(model) = model else {
        return TpeSuggestion {
            candidates: vec![space.sample_uniform(rng)],
            log_ratios: Vec::new(),
            chosen: 0,
            model: None,
        };
    };
    let candidates: Vec<HyperParams> = (0..cfg.n_candidates).map(|_| model.sample_good(space, rng)).collect();
    let (log_ratios, chosen) = score_candidates(&model, space, &candidates);
    TpeSuggestion {
        candidates,
        log_ratios,
        chosen,
        model: Some(model),
    }
}

pub fn run_tpe<R: Rng + ?Sized>(
    space: &SearchSpace,
    cfg: &TpeConfig,
    runner: &mut TrialRunner,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let mut history: Vec<(HyperParams, f64)> = Vec::new();
    while !runner.exhausted() {
        let suggestion = suggest(space, cfg, &history, rng);
        match runner.evaluate_one(&suggestion.point())? {
            Some(record) => history.push((record.hyperparams, record.reward)),
            None => break,
        }
    }
    Ok(())
}
