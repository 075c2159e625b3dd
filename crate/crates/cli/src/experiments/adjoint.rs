// SPDX-License-Identifier: Apache-2.0

//! Adjoint identities of every transposable primitive on a wide
//! Gauss-Legendre grid.

use opdiff_core::adjoint::adjoint_suite;
use opdiff_core::quadrature::GridSpec;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::report::{RunReport, Table};

/// Order of the rows in `adjoint.csv`.
pub const CASES: [&str; 7] = ["nabla", "linearize", "integrate", "compose_f", "compose_g", "permute_args", "zip"];

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(cfg);
    let (a, b, n) = match cfg.grid {
        GridSpec::GaussLegendre { a, b, n } => (a, b, n),
        _ => return Err(CliError::Config("adjoint_check needs a gauss_legendre grid".into())),
    };
    let tol = cfg.tolerance.unwrap_or(1e-5);
    let cases = adjoint_suite(a, b, n)?;
    let mut table = Table::new("adjoint.csv", &["case", "forward", "adjoint", "rel_err"]);
    let mut worst = 0.0f64;
    for c in &cases {
        let i = CASES.iter().position(|p| *p == c.primitive).unwrap_or(CASES.len());
        table.push(vec![i as f64, c.forward, c.adjoint, c.rel_err()]);
        report.metrics.insert(format!("rel_err_{}", c.primitive), c.rel_err());
        worst = worst.max(c.rel_err());
    }
    report.tables.push(table);
    report.metrics.insert("max_rel_err".into(), worst);
    report.passed = worst <= tol;
    Ok(report)
}
