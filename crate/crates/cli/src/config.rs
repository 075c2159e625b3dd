// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration as read from JSON config files.

use std::path::{Path, PathBuf};

use opdiff_core::quadrature::GridSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Brachistochrone,
    Nonlocal,
    AdjointCheck,
    CseBench,
    SemilocalDemo,
}

impl Experiment {
    pub fn parse(s: &str) -> Result<Experiment> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| CliError::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[serde(rename = "minimize_F")]
    MinimizeF,
    #[serde(rename = "minimize_F_via_FD")]
    MinimizeFViaFd,
    #[serde(rename = "minimize_FD")]
    MinimizeFd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Fixed-step gradient descent.
    Sgd,
    /// Adam with a fixed learning rate.
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    #[serde(default = "default_kind")]
    pub kind: OptimizerKind,
    pub step_size: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> OptimizerKind {
    OptimizerKind::Sgd
}

/// Semilocal energy density used by the demo.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    /// `eps = rho`.
    Linear,
    /// `eps = (d rho)^2 / rho`.
    GradientSquared,
    /// `eps = 1 + (d rho)^2`, evaluated on a constant density.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub grid: GridSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Hidden layer widths of the brachistochrone network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Largest graph the nonlocal run may build.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_budget: Option<usize>,
    /// Points per axis of the sampled kernel or curve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<Density>,
    /// Largest nesting depth of the CSE benchmark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_max: Option<usize>,
    /// Relative tolerance of the adjoint check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn default_for(experiment: Experiment) -> ExperimentConfig {
        let base = ExperimentConfig {
            experiment,
            grid: GridSpec::GaussLegendre { a: 0.0, b: 1.0, n: 16 },
            optimizer: OptimizerSpec { kind: OptimizerKind::Sgd, step_size: 0.1, steps: 4, seed: 0 },
            estimator: None,
            out: None,
            hidden: None,
            node_budget: None,
            samples: None,
            density: None,
            depth_max: None,
            tolerance: None,
        };
        match experiment {
            Experiment::Brachistochrone => ExperimentConfig {
                grid: GridSpec::Uniform { a: 0.01, b: 1.0, n: 50 },
                optimizer: OptimizerSpec { kind: OptimizerKind::Adam, step_size: 1e-2, steps: 2000, seed: 0 },
                estimator: Some(Estimator::MinimizeFd),
                hidden: Some(vec![16, 16]),
                ..base
            },
            Experiment::Nonlocal => ExperimentConfig { node_budget: Some(1_000_000), samples: Some(11), ..base },
            Experiment::AdjointCheck => ExperimentConfig {
                grid: GridSpec::GaussLegendre { a: -6.0, b: 6.0, n: 400 },
                optimizer: OptimizerSpec { kind: OptimizerKind::Sgd, step_size: 1.0, steps: 1, seed: 0 },
                tolerance: Some(1e-5),
                ..base
            },
            Experiment::CseBench => ExperimentConfig {
                optimizer: OptimizerSpec { kind: OptimizerKind::Sgd, step_size: 1.0, steps: 1, seed: 0 },
                depth_max: Some(12),
                ..base
            },
            Experiment::SemilocalDemo => ExperimentConfig {
                grid: GridSpec::GaussLegendre { a: 0.0, b: 1.0, n: 32 },
                optimizer: OptimizerSpec { kind: OptimizerKind::Sgd, step_size: 1.0, steps: 1, seed: 0 },
                density: Some(Density::GradientSquared),
                ..base
            },
        }
    }

    pub fn from_path(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let o = &self.optimizer;
        // a zero step size is allowed: it freezes the parameters
        if !(o.step_size >= 0.0 && o.step_size.is_finite()) {
            return bad("optimizer.step_size must be finite and non-negative");
        }
        if o.steps == 0 {
            return bad("optimizer.steps must be positive");
        }
        match &self.grid {
            GridSpec::Uniform { a, b, n } | GridSpec::GaussLegendre { a, b, n } => {
                if !(a < b) || *n == 0 {
                    return bad("grid needs a < b and n > 0");
                }
            }
            GridSpec::Supplied { points, weights } => {
                if points.is_empty() || points.len() != weights.len() || weights.iter().any(|w| *w <= 0.0) {
                    return bad("supplied grid needs matching points and positive weights");
                }
            }
        }
        if self.estimator.is_some() && self.experiment != Experiment::Brachistochrone {
            return bad("estimator applies to the brachistochrone only");
        }
        if matches!(&self.hidden, Some(h) if h.is_empty() || h.contains(&0)) {
            return bad("hidden widths must be positive");
        }
        for (name, v) in [("node_budget", self.node_budget), ("samples", self.samples), ("depth_max", self.depth_max)] {
            if v == Some(0) {
                return bad(&format!("{name} must be positive"));
            }
        }
        if matches!(self.tolerance, Some(t) if !(t > 0.0)) {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}
