// SPDX-License-Identifier: Apache-2.0

//! Run reports and their CSV/JSON artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

/// One CSV table: a file name, a header and rows of numbers.
#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub file: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(file: &str, columns: &[&str]) -> Table {
        Table { file: file.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Shortest round-tripping text for a float; integers print without a
/// fraction.
fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub config: ExperimentConfig,
    /// Entry 0 is the initial state; entry `k` follows update `k`.
    pub steps: Vec<StepRecord>,
    pub tables: Vec<Table>,
    pub metrics: BTreeMap<String, f64>,
    pub passed: bool,
    pub wall_seconds: f64,
    /// Final operator graph, written to `graph.json` on request.
    #[serde(skip)]
    pub graph: Option<serde_json::Value>,
}

impl RunReport {
    pub fn new(config: &ExperimentConfig) -> RunReport {
        RunReport {
            version: env!("CARGO_PKG_VERSION"),
            config: config.clone(),
            steps: Vec::new(),
            tables: Vec::new(),
            metrics: BTreeMap::new(),
            passed: true,
            wall_seconds: 0.0,
            graph: None,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    pub fn loss_csv(&self) -> String {
        let with_nodes = self.steps.iter().any(|s| s.nodes.is_some());
        let mut s = String::from(if with_nodes { "step,loss,grad_norm,nodes\n" } else { "step,loss,grad_norm\n" });
        for r in &self.steps {
            let _ = write!(s, "{},{},{}", r.step, fmt_num(r.loss), fmt_num(r.grad_norm));
            if let Some(n) = r.nodes {
                let _ = write!(s, ",{n}");
            }
            s.push('\n');
        }
        s
    }

    /// Write `report.json`, `loss.csv` (when there are steps), one CSV per
    /// table and `graph.json` (when present) into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if !self.steps.is_empty() {
            std::fs::write(dir.join("loss.csv"), self.loss_csv())?;
        }
        for t in &self.tables {
            std::fs::write(dir.join(&t.file), t.to_csv())?;
        }
        if let Some(g) = &self.graph {
            std::fs::write(dir.join("graph.json"), serde_json::to_string_pretty(g)?)?;
        }
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("curve.csv", &["x", "y"]);
        t.push(vec![0.5, -0.25]);
        t.push(vec![1.0, 2.0]);
        assert_eq!(t.to_csv(), "x,y\n5e-1,-2.5e-1\n1,2\n");
        assert_eq!(t.column("y").unwrap(), vec![-0.25, 2.0]);
        let mut r = RunReport::new(&ExperimentConfig::default_for(Experiment::Nonlocal));
        r.steps.push(StepRecord { step: 0, loss: 0.5, grad_norm: 1.0, nodes: Some(12) });
        assert_eq!(r.loss_csv(), "step,loss,grad_norm,nodes\n0,5e-1,1,12\n");
    }
}
