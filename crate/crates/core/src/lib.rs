//! Hyperparameter search for differentially private SGD.
//!
//! A trial trains a small multilayer perceptron with DPSGD (per-sample
//! clipping plus Gaussian noise) for one `(sigma, eta)` point, measures the
//! validation loss, charges the privacy loss through a Rényi-DP accountant
//! and scores the point with
//!
//! ```text
//! reward = alpha_u * exp(-val_loss) + alpha_p * exp(-epsilon)
//! ```
//!
//! Four search strategies maximize that reward under a trial budget: a
//! non-adaptive grid, an evolutionary search, a tree-structured Parzen
//! estimator and an epsilon-decreasing surrogate-guided search. The ledger
//! module records every trial, how often each training sample was touched,
//! and the cost each strategy spent to match the grid's best reward.

pub mod accountant;
pub mod cli;
pub mod datasets;
pub mod dpsgd;
mod error;
pub mod fmt;
pub mod ledger;
pub mod objective;
pub mod optimizers;
pub mod search_space;

pub use accountant::{epsilon_of_run, rdp_step, MechanismParams, PrivacySpend, RdpCurve};
pub use datasets::{Dataset, DatasetError, VisitCounter};
pub use dpsgd::{Activation, Mlp, TrainConfig, TrainOutcome};
pub use error::{Error, Result};
pub use ledger::{ComparisonReport, Ledger};
pub use objective::{reward, Evaluation, Evaluator, RewardWeights, TrialRecord, TrialStatus};
pub use optimizers::{run_strategy, Budget, SearchResult, StrategyConfig};
pub use search_space::{Dimension, HyperParams, Scale, SearchSpace};

/// Offset added to the base seed for the surrogate network initialization.
pub const SURROGATE_SEED_OFFSET: u64 = 1_000_000;
/// Offset added to the base seed for the train/validation split.
pub const DATA_SEED_OFFSET: u64 = 2_000_000;
