// SPDX-License-Identifier: Apache-2.0

//! Two-layer neural functional trained by functional gradient descent on
//! its kernels and biases: `k <- k - eta dL/dk`.

use std::f64::consts::PI;

use opdiff_core::autodiff::{functional_grad_many, trace, TransposeGrids, VarSpec};
use opdiff_core::operators::{graph_json, integral_transform, EvalSession};
use opdiff_core::quadrature::inner_product_nd;
use opdiff_core::{CallCache, FunctionSignature, FunctionValue, Grid, Tensor, TensorShape};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::report::{RunReport, StepRecord, Table};

/// The initial state: `f`, `b`, target `t` and kernel `k(y, x)`.
pub struct Setup {
    pub f: FunctionValue,
    pub b: FunctionValue,
    pub t: FunctionValue,
    pub k: FunctionValue,
}

impl Setup {
    pub fn standard() -> Result<Setup> {
        let s = TensorShape::scalar();
        Ok(Setup {
            f: FunctionValue::scalar_fn(|x| x.scale(4.0 * PI).sin()),
            b: FunctionValue::scalar_fn(|x| x.scale(PI).sin()),
            t: FunctionValue::scalar_fn(|x| x.scale(PI).cos()),
            k: FunctionValue::build(vec![s.clone(), s], |a| a[0].sin().add(&a[1].cos()))?,
        })
    }
}

/// `int (h2 - t)^2` with `h1 = tanh(K1 f + b1)` and `h2 = K2 h1 + b2`.
pub fn loss_program(setup: &Setup, grid: &Grid) -> Result<opdiff_core::OperatorProgram> {
    let k_spec = VarSpec::new(FunctionSignature::scalar_fn(2));
    let b_spec = VarSpec::scalar_fn();
    let (f, t) = (setup.f.clone(), setup.t.clone());
    let g = grid.clone();
    Ok(trace(&[k_spec.clone(), b_spec.clone(), k_spec, b_spec], move |v| {
        let h1 = integral_transform(&v[0], &f, &g)?.add(&v[1])?.tanh()?;
        let h2 = integral_transform(&v[2], &h1, &g)?.add(&v[3])?;
        let r = h2.sub(&t)?;
        Ok(opdiff_core::operators::integrate(&r.square()?, 0, &g)?.into_functional()?.into())
    })?)
}

fn session(capacity: usize) -> EvalSession {
    EvalSession::new().with_cache(CallCache::with_capacity(capacity))
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(cfg);
    let grid = cfg.grid.build()?;
    let setup = Setup::standard()?;
    let program = loss_program(&setup, &grid)?;
    let budget = cfg.node_budget.unwrap_or(1_000_000);
    let eta = cfg.optimizer.step_size;
    let n_samples = cfg.samples.unwrap_or(11);
    let tgrids = TransposeGrids::default().with_domain((*grid).clone());
    let capacity = 1 << 22;
    let mut params = vec![setup.k.clone(), setup.b.clone(), setup.k.clone(), setup.b.clone()];
    let mut kernel = Table::new("kernel.csv", &["step", "x", "y", "k"]);
    let sample_xs: Vec<f64> = (0..n_samples).map(|i| i as f64 / (n_samples - 1).max(1) as f64).collect();
    for step in 0..=cfg.optimizer.steps {
        let out = program.apply(&params)?;
        let nodes = out.node_count();
        if nodes > budget {
            return Err(CliError::NodeBudgetExceeded { step, nodes, budget });
        }
        let mut s = session(capacity);
        let loss = out.as_functional()?.value_in(&mut s)?.item();
        for &x in &sample_xs {
            for &y in &sample_xs {
                let v = params[0].call_in(&[Tensor::scalar(x), Tensor::scalar(y)], &mut s)?.item();
                kernel.push(vec![step as f64, x, y, v]);
            }
        }
        let grads = functional_grad_many(&program, &params, &tgrids)?;
        let mut grad_norm = 0.0;
        for g in &grads {
            let grids = vec![(*grid).clone(); g.arity()];
            grad_norm += inner_product_nd(g, g, &grids)?;
        }
        if step < cfg.optimizer.steps {
            params = params
                .iter()
                .zip(&grads)
                .map(|(p, g)| p.sub(&g.scale(eta)?))
                .collect::<opdiff_core::Result<Vec<_>>>()?;
        }
        report.steps.push(StepRecord { step, loss, grad_norm, nodes: Some(nodes) });
        if step == cfg.optimizer.steps {
            report.graph = Some(graph_json(&out.as_functional()?.integrand));
        }
    }
    report.tables.push(kernel);
    let losses: Vec<f64> = report.steps.iter().map(|s| s.loss).collect();
    report.metrics.insert("initial_loss".into(), losses[0]);
    report.metrics.insert("final_loss".into(), *losses.last().expect("nonempty"));
    let decreasing = losses.windows(2).all(|w| w[1] < w[0]);
    report.metrics.insert("strictly_decreasing".into(), if decreasing { 1.0 } else { 0.0 });
    Ok(report)
}
