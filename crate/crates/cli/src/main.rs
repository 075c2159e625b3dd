// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use opdiff_cli::{experiments, CliError, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "opdiff", version, about = "Automatic differentiation of higher-order functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV and JSON artifacts.
    Run {
        /// brachistochrone, nonlocal, adjoint_check, cse_bench or semilocal_demo
        experiment: String,
        /// JSON config; built-in defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Override the optimizer step size.
        #[arg(long)]
        step_size: Option<f64>,
        /// Override the optimizer: sgd or adam.
        #[arg(long)]
        optimizer: Option<String>,
        /// Also write graph.json for the experiment's final graph.
        #[arg(long)]
        dump_graph: bool,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let Command::Run { experiment, config, out, seed, steps, step_size, optimizer, dump_graph } = cli.command;
    let experiment = Experiment::parse(&experiment)?;
    let mut cfg = match &config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default_for(experiment),
    };
    if cfg.experiment != experiment {
        return Err(CliError::Config(format!("config is for {:?}, not {experiment:?}", cfg.experiment)));
    }
    if let Some(s) = seed {
        cfg.optimizer.seed = s;
    }
    if let Some(n) = steps {
        cfg.optimizer.steps = n;
    }
    if let Some(h) = step_size {
        cfg.optimizer.step_size = h;
    }
    if let Some(o) = optimizer {
        cfg.optimizer.kind = serde_json::from_value(serde_json::Value::String(o.clone()))
            .map_err(|_| CliError::Config(format!("unknown optimizer {o:?}")))?;
    }
    if out.is_some() {
        cfg.out = out;
    }
    cfg.validate()?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let report = experiments::run_with(&cfg, dump_graph)?;
    report.write(&dir)?;
    for s in report.steps.iter().rev().take(1) {
        println!("step {}: loss {:.6e}, grad_norm {:.6e}", s.step, s.loss, s.grad_norm);
    }
    for (k, v) in &report.metrics {
        println!("{k} = {v:.6e}");
    }
    println!("wrote {} ({:.2} s)", dir.display(), report.wall_seconds);
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // deep operator graphs recurse while lowering
    let worker = std::thread::Builder::new().stack_size(256 << 20).spawn(move || run(cli));
    match worker.map(|h| h.join()) {
        Ok(Ok(Ok(true))) => ExitCode::SUCCESS,
        Ok(Ok(Ok(false))) => {
            eprintln!("error: a check exceeded its tolerance");
            ExitCode::FAILURE
        }
        Ok(Ok(Err(e))) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
        _ => {
            eprintln!("error: worker thread failed");
            ExitCode::FAILURE
        }
    }
}
