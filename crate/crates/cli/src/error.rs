// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] opdiff_core::Error),
    #[error("integrand is singular: y({x}) = {y} is not below the start height")]
    SingularIntegrand { x: f64, y: f64 },
    #[error("density must be positive, got rho({x}) = {rho}")]
    NonPositiveDensity { x: f64, rho: f64 },
    #[error("step {step}: graph has {nodes} nodes, over the budget of {budget}")]
    NodeBudgetExceeded { step: usize, nodes: usize, budget: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0}")]
    ToleranceExceeded(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
