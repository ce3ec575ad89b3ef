//! Epsilon-decreasing search guided by a reward-regression surrogate.
//!
//! Episode 0 is a uniform batch. After every episode the surrogate is refit
//! (warm-started) on all `(centered point, reward)` pairs and evaluated
//! over the whole lattice. In episode `k` each trial explores uniformly
//! with probability `eps0 * eps_decay^k`; otherwise it mutates one of the
//! top-predicted lattice points. Proposals of an episode depend only on the
//! previous surrogate, so they are evaluated as one batch.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrialRunner;
use crate::dpsgd::surrogate::{surrogate_features, surrogate_fit, surrogate_net, surrogate_predict_grid, FitReport, Heatmap, SurrogateFitConfig};
use crate::error::{Error, Result};
use crate::search_space::{HyperParams, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub episodes: usize,
    pub trials_per_episode: usize,
    pub eps0: f64,
    pub eps_decay: f64,
    /// Fraction of lattice cells, by predicted reward, eligible for exploitation.
    pub top_fraction: f64,
    pub mutation_strength: f64,
    pub surrogate: SurrogateFitConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        RlConfig {
            episodes: 10,
            trials_per_episode: 10,
            eps0: 1.0,
            eps_decay: 0.8,
            top_fraction: 0.1,
            mutation_strength: 0.1,
            surrogate: SurrogateFitConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("rl: {m}")));
        if self.episodes == 0 || self.trials_per_episode == 0 {
            return bad("episodes and trials_per_episode must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.eps0) {
            return bad("eps0 must be in [0, 1]");
        }
        if !(self.eps_decay > 0.0 && self.eps_decay <= 1.0) {
            return bad("eps_decay must be in (0, 1]");
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad("top_fraction must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mutation_strength) {
            return bad("mutation_strength must be in [0, 1]");
        }
        if self.surrogate.hidden == 0 {
            return bad("surrogate.hidden must be >= 1");
        }
        Ok(())
    }

    /// Exploration probability in episode `k`.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        self.eps0 * self.eps_decay.powi(episode as i32)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RlTrace {
    /// Lattice predictions after each refit, one per completed episode.
    pub heatmaps: Vec<Heatmap>,
    pub fit_reports: Vec<FitReport>,
    /// Exploration draws per episode.
    pub explorations: Vec<usize>,
}

/// Lattice points `(sigma_index, eta_index)` of the `m` largest predictions,
/// earlier cells first on ties.
pub fn top_cells(map: &Heatmap, fraction: f64) -> Vec<(usize, usize)> {
    let cells = map.values.len();
    let m = ((fraction * cells as f64).ceil() as usize).clamp(1, cells);
    let mut order: Vec<usize> = (0..cells).collect();
    order.sort_by(|&a, &b| map.values[b].partial_cmp(&map.values[a]).unwrap_or(std::cmp::Ordering::Equal));
    order
        .into_iter()
        .take(m)
        .map(|i| (map.sigma_indices[i / map.cols()], map.eta_indices[i % map.cols()]))
        .collect()
}

pub fn run_rl<R: Rng + ?Sized>(
    space: &SearchSpace,
    cfg: &RlConfig,
    runner: &mut TrialRunner,
    rng: &mut R,
    surrogate_seed: u64,
) -> Result<RlTrace> {
    cfg.validate()?;
    let mut trace = RlTrace::default();
    let mut net = surrogate_net(cfg.surrogate.hidden, surrogate_seed)?;
    let mut inputs: Vec<[f64; 2]> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut top: Vec<(usize, usize)> = Vec::new();

    for episode in 0..cfg.episodes {
        if runner.exhausted() {
            break;
        }
        let eps = if episode == 0 { 1.0 } else { cfg.epsilon_at(episode) };
        let mut explored = 0;
        let proposals: Vec<HyperParams> = (0..cfg.trials_per_episode)
            .map(|_| {
                if top.is_empty() || rng.random::<f64>() < eps {
                    explored += 1;
                    space.sample_uniform(rng)
                } else {
                    let (i, j) = top[rng.random_range(0..top.len())];
                    space.mutate(&space.point_at(i, j), cfg.mutation_strength, rng)
                }
            })
            .collect();
        trace.explorations.push(explored);
        let records = runner.evaluate_batch(&proposals)?;
        if records.is_empty() {
            break;
        }
        for r in &records {
            inputs.push(surrogate_features(space, &r.hyperparams));
            targets.push(r.reward);
        }
        let fit_seed = surrogate_seed.wrapping_add(1 + episode as u64);
        let (fitted, report) = surrogate_fit(&net, &inputs, &targets, &cfg.surrogate, fit_seed)?;
        net = fitted;
        log::debug!("rl episode {episode}: {} pairs, mse {} -> {}", inputs.len(), report.initial_mse, report.final_mse);
        let map = surrogate_predict_grid(&net, space, space.shape())?;
        top = top_cells(&map, cfg.top_fraction);
        trace.fit_reports.push(report);
        trace.heatmaps.push(map);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule() {
        let cfg = RlConfig {
            eps0: 1.0,
            eps_decay: 0.9,
            ..Default::default()
        };
        assert!((cfg.epsilon_at(3) - 0.729).abs() < 1e-15);
        assert_eq!(cfg.epsilon_at(0), 1.0);
    }

    #[test]
    fn top_cells_counts_and_order() {
        let map = Heatmap {
            sigma_indices: vec![0, 1],
            eta_indices: vec![0, 1, 2],
            sigma_values: vec![1.0, 2.0],
            eta_values: vec![0.1, 0.2, 0.3],
            values: vec![0.1, 0.9, 0.5, 0.9, 0.2, 0.3],
        };
        assert_eq!(top_cells(&map, 0.01), vec![(0, 1)]);
        assert_eq!(top_cells(&map, 0.5), vec![(0, 1), (1, 0), (0, 2)]);
    }

    #[test]
    fn config_rejects_out_of_range() {
        let mut cfg = RlConfig::default();
        cfg.eps_decay = 0.0;
        assert!(cfg.validate().is_err());
        cfg.eps_decay = 0.5;
        cfg.top_fraction = 1.5;
        assert!(cfg.validate().is_err());
    }
}
