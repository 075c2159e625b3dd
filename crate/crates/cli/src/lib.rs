// SPDX-License-Identifier: Apache-2.0

//! Experiment drivers for `opdiff`.

// `!(a < b)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod optim;
pub mod report;

pub use config::{Estimator, Experiment, ExperimentConfig};
pub use error::{CliError, Result};
pub use report::RunReport;
