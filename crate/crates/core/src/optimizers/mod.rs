//! Search strategies over the `(sigma, eta)` lattice.
//!
//! Every strategy proposes lattice points and hands them to a
//! [`TrialRunner`], which assigns dense trial indices, enforces the
//! [`Budget`] and may evaluate a batch of proposals in parallel. Records
//! always come back ordered by trial index.

pub mod evolutionary;
pub mod grid;
pub mod rl;
pub mod tpe;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use evolutionary::{run_evolutionary, EvoConfig};
pub use grid::{run_grid, GridConfig};
pub use rl::{run_rl, RlConfig, RlTrace};
pub use tpe::{run_tpe, TpeConfig};

use crate::datasets::VisitCounter;
use crate::dpsgd::surrogate::{FitReport, Heatmap};
use crate::error::{Error, Result};
use crate::objective::{Evaluation, Evaluator, TrialRecord};
use crate::search_space::{HyperParams, SearchSpace};
use crate::SURROGATE_SEED_OFFSET;

/// Strategy names accepted by [`StrategyConfig::from_name`].
pub const STRATEGY_NAMES: [&str; 4] = ["grid", "evolutionary", "bayesian", "rl"];

/// Stream of the base seed reserved for a strategy's own proposals.
const STRATEGY_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    pub max_trials: usize,
    #[serde(default)]
    pub max_sample_visits: Option<u64>,
    /// Seconds.
    #[serde(default)]
    pub wall_limit: Option<f64>,
}

impl Budget {
    pub fn trials(max_trials: usize) -> Self {
        Budget {
            max_trials,
            max_sample_visits: None,
            wall_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_trials == 0 {
            return Err(Error::InvalidArgument("max_trials must be >= 1".into()));
        }
        if let Some(w) = self.wall_limit {
            if !(w > 0.0) {
                return Err(Error::InvalidArgument("wall_limit must be > 0".into()));
            }
        }
        Ok(())
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::trials(100)
    }
}

/// Evaluates proposals under a budget and keeps every evaluation in order.
pub struct TrialRunner<'a> {
    evaluator: &'a dyn Evaluator,
    budget: Budget,
    strategy: String,
    pool: Option<rayon::ThreadPool>,
    evaluations: Vec<Evaluation>,
    visits_used: u64,
    started: Instant,
}

impl<'a> TrialRunner<'a> {
    /// `jobs > 1` evaluates batches on a dedicated pool of that many threads.
    pub fn new(evaluator: &'a dyn Evaluator, budget: Budget, strategy: &str, jobs: usize) -> Result<Self> {
        budget.validate()?;
        let pool = if jobs > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(TrialRunner {
            evaluator,
            budget,
            strategy: strategy.to_string(),
            pool,
            evaluations: Vec::new(),
            visits_used: 0,
            started: Instant::now(),
        })
    }

    pub fn strategy(&self) -> &str {
        &self.strategy
    }

    pub fn trials_done(&self) -> usize {
        self.evaluations.len()
    }

    /// Trials still allowed; 0 once any limit is exhausted.
    pub fn remaining(&self) -> usize {
        if let Some(max) = self.budget.max_sample_visits {
            if self.visits_used >= max {
                return 0;
            }
        }
        if let Some(limit) = self.budget.wall_limit {
            if self.started.elapsed().as_secs_f64() >= limit {
                return 0;
            }
        }
        self.budget.max_trials.saturating_sub(self.evaluations.len())
    }

    pub fn exhausted(&self) -> bool {
        self.remaining() == 0
    }

    /// Evaluates as many leading `points` as the budget allows and returns
    /// their records. With a visit or wall limit, points run in chunks of
    /// the pool size and are committed in order until a limit trips, so the
    /// records never depend on the number of jobs (wall time aside).
    pub fn evaluate_batch(&mut self, points: &[HyperParams]) -> Result<Vec<TrialRecord>> {
        let take = points.len().min(self.remaining());
        let chunk = if self.budget.max_sample_visits.is_some() || self.budget.wall_limit.is_some() {
            self.pool.as_ref().map_or(1, |p| p.current_num_threads())
        } else {
            take.max(1)
        };
        let mut out = Vec::with_capacity(take);
        for part in points[..take].chunks(chunk) {
            if self.exhausted() {
                break;
            }
            let first = self.evaluations.len();
            let jobs: Vec<(usize, HyperParams)> = part.iter().enumerate().map(|(k, p)| (first + k, *p)).collect();
            let evaluator = self.evaluator;
            let results: Vec<Result<Evaluation>> = match &self.pool {
                Some(pool) => pool.install(|| jobs.par_iter().map(|(i, p)| evaluator.evaluate(p, *i)).collect()),
                None => jobs.iter().map(|(i, p)| evaluator.evaluate(p, *i)).collect(),
            };
            for (result, (index, _)) in results.into_iter().zip(&jobs) {
                if self.exhausted() {
                    break;
                }
                let mut evaluation = result?;
                evaluation.record.trial_index = *index;
                evaluation.record.strategy = self.strategy.clone();
                self.visits_used += evaluation.record.cost.sample_visits;
                out.push(evaluation.record.clone());
                self.evaluations.push(evaluation);
            }
        }
        Ok(out)
    }

    pub fn evaluate_one(&mut self, point: &HyperParams) -> Result<Option<TrialRecord>> {
        Ok(self.evaluate_batch(std::slice::from_ref(point))?.pop())
    }

    pub fn records(&self) -> impl Iterator<Item = &TrialRecord> {
        self.evaluations.iter().map(|e| &e.record)
    }

    pub fn into_evaluations(self) -> Vec<Evaluation> {
        self.evaluations
    }
}

/// Index of the best successful record: highest reward, earliest trial on ties.
pub fn select_best(records: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if !r.is_ok() {
            continue;
        }
        match best {
            Some(b) if records[b].reward >= r.reward => {}
            _ => best = Some(i),
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyConfig {
    Grid(GridConfig),
    Evolutionary(EvoConfig),
    Bayesian(TpeConfig),
    Rl(RlConfig),
}

impl StrategyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyConfig::Grid(_) => "grid",
            StrategyConfig::Evolutionary(_) => "evolutionary",
            StrategyConfig::Bayesian(_) => "bayesian",
            StrategyConfig::Rl(_) => "rl",
        }
    }

    pub fn from_name(name: &str, settings: &StrategySettings) -> Result<Self> {
        Ok(match name {
            "grid" => StrategyConfig::Grid(settings.grid.clone()),
            "evolutionary" => StrategyConfig::Evolutionary(settings.evolutionary.clone()),
            "bayesian" => StrategyConfig::Bayesian(settings.bayesian.clone()),
            "rl" => StrategyConfig::Rl(settings.rl.clone()),
            other => return Err(Error::UnknownStrategy(other.to_string())),
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategyConfig::Grid(c) => c.validate(),
            StrategyConfig::Evolutionary(c) => c.validate(),
            StrategyConfig::Bayesian(c) => c.validate(),
            StrategyConfig::Rl(c) => c.validate(),
        }
    }
}

/// Per-strategy settings, one block per strategy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySettings {
    pub grid: GridConfig,
    pub evolutionary: EvoConfig,
    pub bayesian: TpeConfig,
    pub rl: RlConfig,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub strategy: String,
    pub records: Vec<TrialRecord>,
    /// Per-trial visit increments, aligned with `records`.
    pub visits: Vec<Option<VisitCounter>>,
    pub best: Option<usize>,
    /// Surrogate reward maps after each episode (RL only).
    pub heatmaps: Vec<Heatmap>,
    pub fit_reports: Vec<FitReport>,
}

impl SearchResult {
    pub fn best_record(&self) -> Option<&TrialRecord> {
        self.best.map(|i| &self.records[i])
    }

    fn from_evaluations(strategy: &str, evaluations: Vec<Evaluation>) -> Self {
        let (records, visits): (Vec<_>, Vec<_>) = evaluations.into_iter().map(|e| (e.record, e.visits)).unzip();
        SearchResult {
            strategy: strategy.to_string(),
            best: select_best(&records),
            records,
            visits,
            heatmaps: Vec::new(),
            fit_reports: Vec::new(),
        }
    }
}

/// The strategy's private random stream for a base seed.
pub fn strategy_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STRATEGY_STREAM);
    rng
}

/// Runs one strategy to completion and picks its best record.
pub fn run_strategy(
    config: &StrategyConfig,
    space: &SearchSpace,
    budget: &Budget,
    evaluator: &dyn Evaluator,
    seed: u64,
    jobs: usize,
) -> Result<SearchResult> {
    config.validate()?;
    space.validate()?;
    let name = config.name();
    let mut runner = TrialRunner::new(evaluator, *budget, name, jobs)?;
    let mut rng = strategy_rng(seed);
    let mut trace = None;
    match config {
        StrategyConfig::Grid(c) => run_grid(space, c, &mut runner)?,
        StrategyConfig::Evolutionary(c) => {
            run_evolutionary(space, c, &mut runner, &mut rng)?;
        }
        StrategyConfig::Bayesian(c) => run_tpe(space, c, &mut runner, &mut rng)?,
        StrategyConfig::Rl(c) => {
            trace = Some(run_rl(space, c, &mut runner, &mut rng, seed.wrapping_add(SURROGATE_SEED_OFFSET))?);
        }
    }
    let mut result = SearchResult::from_evaluations(name, runner.into_evaluations());
    if let Some(t) = trace {
        result.heatmaps = t.heatmaps;
        result.fit_reports = t.fit_reports;
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{TrialCost, TrialStatus};

    fn rec(i: usize, reward: f64, ok: bool) -> TrialRecord {
        TrialRecord {
            trial_index: i,
            strategy: String::new(),
            seed: 0,
            hyperparams: HyperParams { sigma: 1.0, eta: 0.1 },
            val_loss: 0.0,
            val_accuracy: 0.0,
            epsilon: 0.0,
            reward,
            status: if ok { TrialStatus::Ok } else { TrialStatus::Failed },
            cost: TrialCost::default(),
        }
    }

    #[test]
    fn best_prefers_earliest_on_ties_and_skips_failures() {
        let rs = vec![rec(0, 0.3, true), rec(1, 0.7, true), rec(2, 0.7, true), rec(3, 0.9, false)];
        assert_eq!(select_best(&rs), Some(1));
        assert_eq!(select_best(&[rec(0, -1.0, false)]), None);
    }

    #[test]
    fn unknown_strategy_is_rejected() {
        let err = StrategyConfig::from_name("annealing", &StrategySettings::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownStrategy(_)));
        for name in STRATEGY_NAMES {
            assert_eq!(StrategyConfig::from_name(name, &StrategySettings::default()).unwrap().name(), name);
        }
    }
}
