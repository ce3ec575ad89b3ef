use serde::{Deserialize, Serialize};

use super::TrialRunner;
use crate::error::{Error, Result};
use crate::search_space::SearchSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Points per dimension: `[sigma, eta]`.
    pub per_dim: [usize; 2],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { per_dim: [10, 10] }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_dim.contains(&0) {
            return Err(Error::InvalidArgument("grid per_dim counts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evaluates the grid in enumeration order until the budget runs out. The
/// evaluated set never depends on observed rewards.
pub fn run_grid(space: &SearchSpace, cfg: &GridConfig, runner: &mut TrialRunner) -> Result<()> {
    let points = space.enumerate_grid(cfg.per_dim)?;
    runner.evaluate_batch(&points)?;
    Ok(())
}
