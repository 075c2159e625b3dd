// SPDX-License-Identifier: Apache-2.0

//! Call counts and timings of the nested `h_i = f(h_{i-1}) + g(h_{i-1})`
//! family with and without the call cache.

use opdiff_core::memo::{depth_benchmark, DEPTH_CSV_HEADER};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{RunReport, Table};

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(cfg);
    let rows = depth_benchmark(cfg.depth_max.unwrap_or(12), 5)?;
    let columns: Vec<&str> = DEPTH_CSV_HEADER.split(',').collect();
    let mut table = Table::new("cse.csv", &columns);
    let mut counts_ok = true;
    for r in &rows {
        let d = r.depth as u64;
        counts_ok &= r.calls_naive == 1 << d && r.calls_cached <= 2 * d + 1;
        table.push(vec![d as f64, r.calls_cached as f64, r.calls_naive as f64, r.seconds_cached, r.seconds_naive]);
    }
    let last = rows.last().expect("depth_max is positive");
    report.metrics.insert("calls_cached_max_depth".into(), last.calls_cached as f64);
    report.metrics.insert("calls_naive_max_depth".into(), last.calls_naive as f64);
    report.metrics.insert("counts_ok".into(), if counts_ok { 1.0 } else { 0.0 });
    report.tables.push(table);
    report.passed = counts_ok;
    Ok(report)
}
