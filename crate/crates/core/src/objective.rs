//! Scoring a hyperparameter point: train, account, reward.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, VisitCounter};
use crate::dpsgd::{train, Activation, Mlp, TrainConfig};
use crate::error::{Error, Result};
use crate::search_space::{HyperParams, SearchSpace};

/// Reward assigned to failed trials; below every valid reward.
pub const FAILED_REWARD: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub alpha_u: f64,
    pub alpha_p: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            alpha_u: 0.5,
            alpha_p: 0.5,
        }
    }
}

impl RewardWeights {
    pub fn new(alpha_u: f64, alpha_p: f64) -> Result<Self> {
        let w = RewardWeights { alpha_u, alpha_p };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha_u", self.alpha_u), ("alpha_p", self.alpha_p)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }

    /// Largest attainable reward, `alpha_u + alpha_p`.
    pub fn max_reward(&self) -> f64 {
        self.alpha_u + self.alpha_p
    }

    /// Reward as a percentage of [`RewardWeights::max_reward`].
    pub fn percent(&self, reward: f64) -> f64 {
        if self.max_reward() > 0.0 {
            100.0 * reward / self.max_reward()
        } else {
            0.0
        }
    }
}

/// `alpha_u * exp(-val_loss) + alpha_p * exp(-epsilon)`.
pub fn reward(val_loss: f64, epsilon: f64, w: &RewardWeights) -> Result<f64> {
    if !val_loss.is_finite() || !epsilon.is_finite() {
        return Err(Error::NonFiniteReward { val_loss, epsilon });
    }
    Ok(w.alpha_u * (-val_loss).exp() + w.alpha_p * (-epsilon).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

impl TrialStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrialStatus::Ok => "ok",
            TrialStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialCost {
    pub wall_seconds: f64,
    pub steps: u64,
    pub sample_visits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub strategy: String,
    pub seed: u64,
    pub hyperparams: HyperParams,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub epsilon: f64,
    pub reward: f64,
    pub status: TrialStatus,
    pub cost: TrialCost,
}

impl TrialRecord {
    pub fn is_ok(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}

/// A scored trial plus the per-sample visit increments it caused, when it
/// touched a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub record: TrialRecord,
    pub visits: Option<VisitCounter>,
}

/// Anything that can score a lattice point. Implementations must be pure in
/// `(hp, trial_index)` apart from wall-clock timing.
pub trait Evaluator: Sync {
    fn evaluate(&self, hp: &HyperParams, trial_index: usize) -> Result<Evaluation>;
}

impl<F> Evaluator for F
where
    F: Fn(&HyperParams, usize) -> Result<Evaluation> + Sync,
{
    fn evaluate(&self, hp: &HyperParams, trial_index: usize) -> Result<Evaluation> {
        self(hp, trial_index)
    }
}

/// Fixed part of every trial's training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainTemplate {
    pub epochs: usize,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub delta: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainTemplate {
    fn default() -> Self {
        TrainTemplate {
            epochs: 3,
            batch_size: 64,
            clip_norm: 1.0,
            delta: 1e-5,
            hidden: vec![64],
            activation: Activation::Tanh,
        }
    }
}

/// Trains a DPSGD model per trial and scores it.
///
/// Trial `i` uses seed `base_seed + i`: stream 0 of that seed drives
/// shuffling and noise, stream 1 the weight initialization.
#[derive(Debug, Clone)]
pub struct DpsgdObjective {
    pub train: Dataset,
    pub valid: Dataset,
    pub template: TrainTemplate,
    pub weights: RewardWeights,
    pub base_seed: u64,
}

impl DpsgdObjective {
    pub fn new(
        train: Dataset,
        valid: Dataset,
        template: TrainTemplate,
        weights: RewardWeights,
        base_seed: u64,
    ) -> Result<Self> {
        weights.validate()?;
        if train.is_empty() || valid.is_empty() {
            return Err(Error::InvalidArgument("training and validation sets must be non-empty".into()));
        }
        let probe = TrainConfig {
            epochs: template.epochs,
            batch_size: template.batch_size,
            clip_norm: template.clip_norm,
            sigma: 1.0,
            eta: 0.1,
            seed: 0,
            delta: template.delta,
        };
        probe.validate(train.len())?;
        Ok(DpsgdObjective {
            train,
            valid,
            template,
            weights,
            base_seed,
        })
    }

    pub fn trial_seed(&self, trial_index: usize) -> u64 {
        self.base_seed.wrapping_add(trial_index as u64)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.train.dim];
        sizes.extend(&self.template.hidden);
        sizes.push(self.train.num_classes);
        sizes
    }

    pub fn initial_model(&self, seed: u64) -> Result<Mlp> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Mlp::glorot(&self.layer_sizes(), self.template.activation, &mut rng)
    }

    pub fn evaluate_trial(&self, hp: &HyperParams, trial_index: usize) -> Result<Evaluation> {
        let seed = self.trial_seed(trial_index);
        let cfg = TrainConfig {
            epochs: self.template.epochs,
            batch_size: self.template.batch_size,
            clip_norm: self.template.clip_norm,
            sigma: hp.sigma,
            eta: hp.eta,
            seed,
            delta: self.template.delta,
        };
        let started = Instant::now();
        let model = self.initial_model(seed)?;
        let outcome = train(&model, &self.train, &self.valid, &cfg)?;
        let wall_seconds = started.elapsed().as_secs_f64();

        let scored = if outcome.diverged {
            None
        } else {
            reward(outcome.val_loss, outcome.epsilon.epsilon, &self.weights).ok()
        };
        let (status, reward) = match scored {
            Some(r) => (TrialStatus::Ok, r),
            None => (TrialStatus::Failed, FAILED_REWARD),
        };
        if status == TrialStatus::Ok {
            debug_assert_eq!(outcome.visits.total(), (cfg.epochs * self.train.len()) as u64);
        }
        log::debug!(
            "trial {trial_index}: sigma={} eta={} val_loss={} eps={} (order {:?}) reward={reward}",
            hp.sigma,
            hp.eta,
            outcome.val_loss,
            outcome.epsilon.epsilon,
            outcome.epsilon.order
        );
        Ok(Evaluation {
            record: TrialRecord {
                trial_index,
                strategy: String::new(),
                seed,
                hyperparams: *hp,
                val_loss: outcome.val_loss,
                val_accuracy: outcome.val_accuracy,
                epsilon: outcome.epsilon.epsilon,
                reward,
                status,
                cost: TrialCost {
                    wall_seconds,
                    steps: outcome.steps_taken,
                    sample_visits: outcome.visits.total(),
                },
            },
            visits: Some(outcome.visits),
        })
    }
}

impl Evaluator for DpsgdObjective {
    fn evaluate(&self, hp: &HyperParams, trial_index: usize) -> Result<Evaluation> {
        self.evaluate_trial(hp, trial_index)
    }
}

/// Smooth, unimodal stand-in for training, written in reward form so that
/// its records satisfy the same invariants as real trials. With `u` the
/// normalized sigma and `v` the normalized `log10 eta`:
///
/// ```text
/// val_loss = 0.1 + u^2 + 6 (v - 0.6)^2
/// epsilon  = (1 - u)^2
/// ```
///
/// Costs nothing and touches no data.
#[derive(Debug, Clone)]
pub struct AnalyticSurface {
    pub space: SearchSpace,
    pub weights: RewardWeights,
}

impl AnalyticSurface {
    pub fn new(space: SearchSpace) -> Self {
        AnalyticSurface {
            space,
            weights: RewardWeights::default(),
        }
    }

    pub fn components(&self, hp: &HyperParams) -> (f64, f64) {
        let [u, v] = self.space.normalize(hp);
        let val_loss = 0.1 + u * u + 6.0 * (v - 0.6).powi(2);
        let epsilon = (1.0 - u).powi(2);
        (val_loss, epsilon)
    }

    pub fn reward_at(&self, hp: &HyperParams) -> f64 {
        let (l, e) = self.components(hp);
        reward(l, e, &self.weights).expect("finite surface")
    }

    /// Best lattice point by exhaustive evaluation.
    pub fn lattice_optimum(&self) -> (HyperParams, f64) {
        let mut best = (self.space.point_at(0, 0), f64::NEG_INFINITY);
        for p in self.space.lattice() {
            let r = self.reward_at(&p);
            if r > best.1 {
                best = (p, r);
            }
        }
        best
    }
}

impl Evaluator for AnalyticSurface {
    fn evaluate(&self, hp: &HyperParams, trial_index: usize) -> Result<Evaluation> {
        let (val_loss, epsilon) = self.components(hp);
        Ok(Evaluation {
            record: TrialRecord {
                trial_index,
                strategy: String::new(),
                seed: trial_index as u64,
                hyperparams: *hp,
                val_loss,
                val_accuracy: (-val_loss).exp(),
                epsilon,
                reward: reward(val_loss, epsilon, &self.weights)?,
                status: TrialStatus::Ok,
                cost: TrialCost::default(),
            },
            visits: None,
        })
    }
}

/// Highest reward among successful grid trials.
pub fn baseline_reward(records: &[TrialRecord]) -> Result<f64> {
    records
        .iter()
        .filter(|r| r.is_ok())
        .map(|r| r.reward)
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
        .ok_or(Error::NoOkRecords)
}
