//! Hyperparameter points and the bounded, quantized lattice they live on.
//!
//! Every dimension is a finite lattice `lo + k * step`. For a logarithmic
//! dimension the lattice is laid out in `log10` space: `lo` and `hi` are
//! given in natural units while `step` is a `log10` increment. All strategies
//! route their proposals through [`SearchSpace::quantize`], so every emitted
//! point is an exact lattice value.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when counting lattice points and detecting ties.
const LATTICE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    #[serde(alias = "logarithmic")]
    Log,
}

/// One point `(sigma, eta)`: noise multiplier and learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub sigma: f64,
    pub eta: f64,
}

impl HyperParams {
    pub fn new(sigma: f64, eta: f64) -> Result<Self> {
        for (name, v) in [("sigma", sigma), ("eta", eta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(HyperParams { sigma, eta })
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.sigma, self.eta]
    }

    pub fn from_array(values: [f64; 2]) -> Self {
        HyperParams {
            sigma: values[0],
            eta: values[1],
        }
    }
}

/// A bounded, quantized axis of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    #[serde(default)]
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    #[serde(default)]
    pub scale: Scale,
}

impl Dimension {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64, step: f64, scale: Scale) -> Result<Self> {
        let dim = Dimension {
            name: name.into(),
            lo,
            hi,
            step,
            scale,
        };
        dim.validate()?;
        Ok(dim)
    }

    pub fn linear(name: impl Into<String>, lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(name, lo, hi, step, Scale::Linear)
    }

    /// `step` is a `log10` increment.
    pub fn log(name: impl Into<String>, lo: f64, hi: f64, step: f64) -> Result<Self> {
        Self::new(name, lo, hi, step, Scale::Log)
    }

    /// Checks the dimension invariants. `lo == hi` is accepted as a
    /// single-point lattice.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidArgument(format!(
                "dimension `{}`: {what}",
                self.name
            )))
        };
        if !(self.lo.is_finite() && self.hi.is_finite() && self.step.is_finite()) {
            return bad("bounds and step must be finite");
        }
        if self.lo > self.hi {
            return bad("lo must not exceed hi");
        }
        if self.step <= 0.0 {
            return bad("step must be > 0");
        }
        if self.scale == Scale::Log && self.lo <= 0.0 {
            return bad("logarithmic scale requires lo > 0");
        }
        if self.name.is_empty() {
            return bad("name must not be empty");
        }
        Ok(())
    }

    /// Maps a natural value into the lattice domain (`log10` for log scale).
    pub fn to_domain(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.log10(),
        }
    }

    pub fn from_domain(&self, d: f64) -> f64 {
        match self.scale {
            Scale::Linear => d,
            Scale::Log => 10f64.powf(d),
        }
    }

    pub fn domain_lo(&self) -> f64 {
        self.to_domain(self.lo)
    }

    /// Domain coordinate of the last lattice point (not necessarily `hi`).
    pub fn domain_hi(&self) -> f64 {
        self.domain_lo() + (self.len() - 1) as f64 * self.step
    }

    /// Width of the declared range in the lattice domain.
    pub fn domain_width(&self) -> f64 {
        self.to_domain(self.hi) - self.domain_lo()
    }

    /// Number of lattice points, `floor((hi - lo) / step) + 1`.
    pub fn len(&self) -> usize {
        let span = self.domain_width() / self.step;
        (span + LATTICE_EPS).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value_at(&self, index: usize) -> f64 {
        debug_assert!(index < self.len());
        let d = self.domain_lo() + index as f64 * self.step;
        match self.scale {
            Scale::Linear => d,
            Scale::Log => 10f64.powf(d),
        }
    }

    /// Index of the nearest lattice point; exact midpoints go to the lower
    /// point, out-of-range values clamp.
    pub fn index_of(&self, v: f64) -> usize {
        let n = self.len();
        let d = match self.scale {
            Scale::Log if v <= 0.0 => return 0,
            _ => self.to_domain(v),
        };
        let k = (d - self.domain_lo()) / self.step;
        if k.is_nan() || k <= 0.0 {
            return 0;
        }
        let idx = (k - 0.5 - LATTICE_EPS).ceil();
        if idx >= (n - 1) as f64 {
            n - 1
        } else {
            idx.max(0.0) as usize
        }
    }

    pub fn snap(&self, v: f64) -> f64 {
        self.value_at(self.index_of(v))
    }

    /// True when `v` is exactly one of the lattice values.
    pub fn contains(&self, v: f64) -> bool {
        self.value_at(self.index_of(v)) == v
    }

    /// Position of `v` in `[0, 1]` along the domain (0 for a single-point lattice).
    pub fn normalize(&self, v: f64) -> f64 {
        let width = self.domain_hi() - self.domain_lo();
        if width <= 0.0 {
            return 0.0;
        }
        ((self.to_domain(v) - self.domain_lo()) / width).clamp(0.0, 1.0)
    }

    /// `count` equally spaced lattice indices, first and last included.
    pub fn spaced_indices(&self, count: usize) -> Vec<usize> {
        let n = self.len();
        if count <= 1 {
            return vec![0];
        }
        (0..count)
            .map(|i| ((i * (n - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect()
    }
}

/// The two-dimensional `(sigma, eta)` search lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub sigma: Dimension,
    pub eta: Dimension,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            sigma: Dimension::linear("sigma", 0.5, 5.0, 0.05).expect("valid default"),
            eta: Dimension::log("eta", 1e-3, 1.0, 0.05).expect("valid default"),
        }
    }
}

impl SearchSpace {
    pub fn new(sigma: Dimension, eta: Dimension) -> Result<Self> {
        let space = SearchSpace { sigma, eta };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        self.sigma.validate()?;
        self.eta.validate()?;
        if self.sigma.name == self.eta.name {
            return Err(Error::InvalidArgument(format!(
                "duplicate dimension name `{}`",
                self.sigma.name
            )));
        }
        if self.sigma.lo <= 0.0 || self.eta.lo <= 0.0 {
            return Err(Error::InvalidArgument(
                "sigma and eta lattices must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn dims(&self) -> [&Dimension; 2] {
        [&self.sigma, &self.eta]
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.sigma.len(), self.eta.len()]
    }

    pub fn cardinality(&self) -> usize {
        self.sigma.len() * self.eta.len()
    }

    pub fn point_at(&self, sigma_index: usize, eta_index: usize) -> HyperParams {
        HyperParams {
            sigma: self.sigma.value_at(sigma_index),
            eta: self.eta.value_at(eta_index),
        }
    }

    pub fn index_of(&self, hp: &HyperParams) -> [usize; 2] {
        [self.sigma.index_of(hp.sigma), self.eta.index_of(hp.eta)]
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.sigma.contains(hp.sigma) && self.eta.contains(hp.eta)
    }

    /// Per-dimension position in `[0, 1]`, the surrogate network's input.
    pub fn normalize(&self, hp: &HyperParams) -> [f64; 2] {
        [self.sigma.normalize(hp.sigma), self.eta.normalize(hp.eta)]
    }

    /// Each dimension drawn independently and uniformly over its lattice points.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperParams {
        let i = rng.random_range(0..self.sigma.len());
        let j = rng.random_range(0..self.eta.len());
        self.point_at(i, j)
    }

    /// Snaps every field to its nearest lattice point (ties toward `lo`).
    pub fn quantize(&self, raw: &HyperParams) -> HyperParams {
        HyperParams {
            sigma: self.sigma.snap(raw.sigma),
            eta: self.eta.snap(raw.eta),
        }
    }

    /// Gaussian perturbation with standard deviation `strength * (hi - lo)`
    /// in each dimension's domain, clamped to the range and quantized.
    /// `strength == 0` returns the point unchanged.
    pub fn mutate<R: Rng + ?Sized>(&self, point: &HyperParams, strength: f64, rng: &mut R) -> HyperParams {
        if strength <= 0.0 {
            return self.quantize(point);
        }
        let mut out = point.as_array();
        for (value, dim) in out.iter_mut().zip(self.dims()) {
            let std = strength * dim.domain_width();
            let d = dim.to_domain(*value);
            let moved = if std > 0.0 {
                let noise = Normal::new(0.0, std).expect("positive std");
                d + noise.sample(rng)
            } else {
                d
            };
            let clamped = moved.clamp(dim.domain_lo(), dim.domain_hi());
            *value = dim.snap(dim.from_domain(clamped));
        }
        HyperParams::from_array(out)
    }

    /// Cartesian product of equally spaced lattice subsets, sigma outer and
    /// eta inner.
    pub fn enumerate_grid(&self, per_dim: [usize; 2]) -> Result<Vec<HyperParams>> {
        for (count, dim) in per_dim.iter().zip(self.dims()) {
            if *count == 0 || *count > dim.len() {
                return Err(Error::InvalidArgument(format!(
                    "grid count {} for `{}` must be in 1..={}",
                    count,
                    dim.name,
                    dim.len()
                )));
            }
        }
        let sigma_idx = self.sigma.spaced_indices(per_dim[0]);
        let eta_idx = self.eta.spaced_indices(per_dim[1]);
        let mut points = Vec::with_capacity(sigma_idx.len() * eta_idx.len());
        for &i in &sigma_idx {
            for &j in &eta_idx {
                points.push(self.point_at(i, j));
            }
        }
        Ok(points)
    }

    /// Every lattice point in row-major order (sigma rows, eta columns).
    pub fn lattice(&self) -> Vec<HyperParams> {
        let [n_sigma, n_eta] = self.shape();
        let mut points = Vec::with_capacity(n_sigma * n_eta);
        for i in 0..n_sigma {
            for j in 0..n_eta {
                points.push(self.point_at(i, j));
            }
        }
        points
    }
}
