// SPDX-License-Identifier: Apache-2.0

pub mod adjoint;
pub mod brachistochrone;
pub mod cse;
pub mod nonlocal;
pub mod semilocal;

use crate::config::{Experiment, ExperimentConfig};
use crate::error::Result;
use crate::report::RunReport;

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_with(cfg, false)
}

/// Run `cfg`; with `dump_graph` the report keeps the final operator graph
/// of experiments that build one.
pub fn run_with(cfg: &ExperimentConfig, dump_graph: bool) -> Result<RunReport> {
    let t = std::time::Instant::now();
    let mut report = match cfg.experiment {
        Experiment::Brachistochrone => brachistochrone::run(cfg)?,
        Experiment::Nonlocal => nonlocal::run(cfg)?,
        Experiment::AdjointCheck => adjoint::run(cfg)?,
        Experiment::CseBench => cse::run(cfg)?,
        Experiment::SemilocalDemo => semilocal::run(cfg)?,
    };
    if !dump_graph {
        report.graph = None;
    }
    report.wall_seconds = t.elapsed().as_secs_f64();
    Ok(report)
}
