//! Brute-force TPE densities recomputed from a raw history. Neighbors come
//! from linear scans and each truncated kernel is normalized by Simpson
//! integration rather than the error function.

use dptune::search_space::{Dimension, HyperParams, SearchSpace};

struct Kernel {
    center: f64,
    std: f64,
    weight: f64,
    mass: f64,
}

pub struct Density {
    kernels: Vec<Kernel>,
    lo: f64,
    hi: f64,
}

fn gauss(x: f64, c: f64, s: f64) -> f64 {
    let z = (x - c) / s;
    (-0.5 * z * z).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

fn simpson(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

impl Density {
    pub fn fit(obs: &[f64], dim: &Dimension, prior_weight: f64) -> Self {
        let (lo, hi) = (dim.domain_lo(), dim.domain_hi());
        let floor = (hi - lo) / dim.len() as f64;
        let mut kernels = Vec::new();
        for &c in obs {
            let left = obs.iter().copied().filter(|&v| v < c).fold(lo, f64::max);
            let right = obs.iter().copied().filter(|&v| v > c).fold(hi, f64::min);
            let std = (c - left).max(right - c).max(floor);
            kernels.push(Kernel { center: c, std, weight: 1.0, mass: 0.0 });
        }
        if prior_weight > 0.0 && !obs.is_empty() {
            kernels.push(Kernel {
                center: 0.5 * (lo + hi),
                std: hi - lo,
                weight: prior_weight,
                mass: 0.0,
            });
        }
        for k in &mut kernels {
            k.mass = simpson(lo, hi, |x| gauss(x, k.center, k.std));
        }
        Density { kernels, lo, hi }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if self.kernels.is_empty() {
            return 1.0 / (self.hi - self.lo);
        }
        let total: f64 = self.kernels.iter().map(|k| k.weight).sum();
        self.kernels
            .iter()
            .map(|k| k.weight * gauss(x, k.center, k.std) / k.mass)
            .sum::<f64>()
            / total
    }
}

/// `(l, g)` per dimension from the reward-ranked split of `history`.
pub fn densities(space: &SearchSpace, history: &[(HyperParams, f64)], gamma: f64, prior_weight: f64) -> [(Density, Density); 2] {
    let n = history.len();
    let n_good = ((gamma * n as f64).ceil() as usize).clamp(1, n);
    // Rank by reward, earlier trial first among equals.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 1..n {
        let mut j = i;
        while j > 0 && history[order[j]].1 > history[order[j - 1]].1 {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    let dims = space.dims();
    let split = |k: usize| {
        let vals = |idx: &[usize]| -> Vec<f64> {
            idx.iter()
                .map(|&i| dims[k].to_domain(history[i].0.as_array()[k]))
                .collect()
        };
        (
            Density::fit(&vals(&order[..n_good]), dims[k], prior_weight),
            Density::fit(&vals(&order[n_good..]), dims[k], prior_weight),
        )
    };
    [split(0), split(1)]
}

pub fn log_ratio(space: &SearchSpace, dens: &[(Density, Density); 2], hp: &HyperParams) -> f64 {
    let dims = space.dims();
    (0..2)
        .map(|k| {
            let x = dims[k].to_domain(hp.as_array()[k]);
            dens[k].0.pdf(x).ln() - dens[k].1.pdf(x).ln()
        })
        .sum()
}
