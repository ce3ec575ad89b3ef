//! Genetic search: each hyperparameter is a gene, a `(sigma, eta)` pair a
//! genome. Generation 0 is sampled uniformly; later generations keep the
//! elites verbatim (without re-evaluating them) and fill the rest with
//! mutated uniform-crossover children of tournament-selected parents.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrialRunner;
use crate::error::{Error, Result};
use crate::search_space::{HyperParams, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvoConfig {
    pub population_size: usize,
    pub generations: usize,
    pub elite_fraction: f64,
    /// Probability that a child takes each gene from its first parent.
    pub crossover_rate: f64,
    pub mutation_strength: f64,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population_size: 10,
            generations: 10,
            elite_fraction: 0.2,
            crossover_rate: 0.5,
            mutation_strength: 0.1,
        }
    }
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("evolutionary: {m}")));
        if self.population_size < 2 {
            return bad("population_size must be >= 2");
        }
        if self.generations == 0 {
            return bad("generations must be >= 1");
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return bad("elite_fraction must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad("crossover_rate must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.mutation_strength) {
            return bad("mutation_strength must be in [0, 1]");
        }
        Ok(())
    }

    /// `round(elite_fraction * population_size)`, at least one.
    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population_size as f64).round() as usize).clamp(1, self.population_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Individual {
    pub genome: HyperParams,
    pub fitness: f64,
    pub trial_index: usize,
}

/// Higher fitness first, earlier trial first on ties.
fn fitter(a: &Individual, b: &Individual) -> Ordering {
    b.fitness
        .partial_cmp(&a.fitness)
        .unwrap_or(Ordering::Equal)
        .then(a.trial_index.cmp(&b.trial_index))
}

/// Size-2 tournament.
fn tournament<'p, R: Rng + ?Sized>(population: &'p [Individual], rng: &mut R) -> &'p Individual {
    let a = &population[rng.random_range(0..population.len())];
    let b = &population[rng.random_range(0..population.len())];
    if fitter(a, b) == Ordering::Greater {
        b
    } else {
        a
    }
}

/// Per-gene uniform crossover followed by mutation.
pub fn breed<R: Rng + ?Sized>(
    space: &SearchSpace,
    a: &HyperParams,
    b: &HyperParams,
    crossover_rate: f64,
    mutation_strength: f64,
    rng: &mut R,
) -> HyperParams {
    let (ga, gb) = (a.as_array(), b.as_array());
    let mut child = [0.0; 2];
    for k in 0..2 {
        child[k] = if rng.random::<f64>() < crossover_rate { ga[k] } else { gb[k] };
    }
    space.mutate(&HyperParams::from_array(child), mutation_strength, rng)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvoTrace {
    /// Best fitness of each generation's population.
    pub generation_best: Vec<f64>,
}

pub fn run_evolutionary<R: Rng + ?Sized>(
    space: &SearchSpace,
    cfg: &EvoConfig,
    runner: &mut TrialRunner,
    rng: &mut R,
) -> Result<EvoTrace> {
    cfg.validate()?;
    let mut trace = EvoTrace::default();
    let founders: Vec<HyperParams> = (0..cfg.population_size).map(|_| space.sample_uniform(rng)).collect();
    let mut population: Vec<Individual> = runner
        .evaluate_batch(&founders)?
        .into_iter()
        .map(|r| Individual {
            genome: r.hyperparams,
            fitness: r.reward,
            trial_index: r.trial_index,
        })
        .collect();
    if population.is_empty() {
        return Ok(trace);
    }
    population.sort_by(fitter);
    trace.generation_best.push(population[0].fitness);

    let elites = cfg.elite_count().min(population.len());
    for _ in 1..cfg.generations {
        let wanted = cfg.population_size - elites;
        if wanted > 0 && runner.exhausted() {
            break;
        }
        let children: Vec<HyperParams> = (0..wanted)
            .map(|_| {
                let a = tournament(&population, rng).genome;
                let b = tournament(&population, rng).genome;
                breed(space, &a, &b, cfg.crossover_rate, cfg.mutation_strength, rng)
            })
            .collect();
        let evaluated = runner.evaluate_batch(&children)?;
        let truncated = evaluated.len() < wanted;
        population.truncate(elites);
        population.extend(evaluated.into_iter().map(|r| Individual {
            genome: r.hyperparams,
            fitness: r.reward,
            trial_index: r.trial_index,
        }));
        population.sort_by(fitter);
        trace.generation_best.push(population[0].fitness);
        if truncated {
            break;
        }
    }
    Ok(trace)
}
