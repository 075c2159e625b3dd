// SPDX-License-Identifier: Apache-2.0

//! Potential `v = dE/drho` of a one-dimensional semilocal energy
//! `E(rho) = int rho eps(rho, rho') dx`, checked against the
//! Euler-Lagrange expression worked out by hand.

use std::f64::consts::PI;

use opdiff_core::autodiff::{functional_grad, trace, OperatorProgram, VarSpec};
use opdiff_core::operators::{compose, graph_json, integrate, nabla};
use opdiff_core::quadrature::pairwise_sum_f64;
use opdiff_core::{FunctionValue, Grid, TensorShape};

use crate::config::{Density, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::report::{RunReport, StepRecord, Table};

/// `int phi(x, f(x), f'(x)) dx` as an operator program in `f`.
pub fn semilocal_energy(phi: &FunctionValue, grid: &Grid) -> Result<OperatorProgram> {
    let id = FunctionValue::identity(TensorShape::scalar());
    Ok(trace(&[VarSpec::scalar_fn()], |v| {
        let local = compose(phi, &[id.clone(), v[0].clone(), nabla(&v[0], 0)?])?;
        Ok(integrate(&local, 0, grid)?.into_functional()?.into())
    })?)
}

/// `rho eps` over `(x, rho, rho')`.
fn energy_density(d: Density) -> Result<FunctionValue> {
    let s = TensorShape::scalar();
    Ok(FunctionValue::build(vec![s.clone(), s.clone(), s], |a| {
        let (r, dr) = (&a[1], &a[2]);
        let eps = match d {
            Density::Linear => r.clone(),
            Density::GradientSquared => dr.mul(dr)?.div(r)?,
            Density::Constant => dr.mul(dr)?.add_scalar(1.0),
        };
        r.mul(&eps)
    })?)
}

/// The density and its first two derivatives.
fn density(d: Density) -> (FunctionValue, fn(f64) -> [f64; 3]) {
    match d {
        Density::Constant => (FunctionValue::scalar_fn(|x| x.scale(0.0).add_scalar(1.5)), |_| [1.5, 0.0, 0.0]),
        _ => (FunctionValue::scalar_fn(|x| x.scale(2.0 * PI).sin().scale(0.5).add_scalar(1.0)), |x| {
            let w = 2.0 * PI;
            [1.0 + 0.5 * (w * x).sin(), 0.5 * w * (w * x).cos(), -0.5 * w * w * (w * x).sin()]
        }),
    }
}

/// `d phi/d rho - d/dx d phi/d rho'` for each density, derived by hand.
pub fn euler_lagrange(d: Density, [r, dr, ddr]: [f64; 3]) -> f64 {
    match d {
        // phi = rho^2
        Density::Linear => 2.0 * r,
        // phi = rho'^2
        Density::GradientSquared => -2.0 * ddr,
        // phi = rho + rho rho'^2
        Density::Constant => 1.0 + dr * dr - 2.0 * (dr * dr + r * ddr),
    }
}

pub fn check_positive(rho: &FunctionValue, grid: &Grid) -> Result<()> {
    for x in grid.xs() {
        let r = rho.at(x)?;
        if !(r > 0.0) {
            return Err(CliError::NonPositiveDensity { x, rho: r });
        }
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(cfg);
    let grid = cfg.grid.build()?;
    let d = cfg.density.unwrap_or(Density::GradientSquared);
    let (rho, exact) = density(d);
    check_positive(&rho, &grid)?;
    let program = semilocal_energy(&energy_density(d)?, &grid)?;
    let energy = program.apply(std::slice::from_ref(&rho))?.as_functional()?.value()?.item();
    let v = functional_grad(&program, &rho)?;
    let mut table = Table::new("potential.csv", &["x", "rho", "v", "oracle"]);
    let mut dev = 0.0f64;
    let mut norm = Vec::with_capacity(grid.len());
    for (x, w) in grid.xs().into_iter().zip(grid.weights()) {
        let vx = v.at(x)?;
        let o = euler_lagrange(d, exact(x));
        dev = dev.max((vx - o).abs());
        norm.push(w * vx * vx);
        table.push(vec![x, rho.at(x)?, vx, o]);
    }
    report.steps.push(StepRecord {
        step: 0,
        loss: energy,
        grad_norm: pairwise_sum_f64(&norm),
        nodes: Some(v.node_count()),
    });
    report.tables.push(table);
    report.metrics.insert("energy".into(), energy);
    report.metrics.insert("max_deviation".into(), dev);
    report.passed = dev <= cfg.tolerance.unwrap_or(1e-4);
    report.graph = Some(graph_json(&v));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Experiment;

    #[test]
    fn every_density_matches_its_oracle() {
        for d in [Density::Linear, Density::GradientSquared, Density::Constant] {
            let mut cfg = ExperimentConfig::default_for(Experiment::SemilocalDemo);
            cfg.density = Some(d);
            let r = run(&cfg).unwrap();
            assert!(r.passed, "{d:?}: {:?}", r.metrics);
        }
    }

    #[test]
    fn negative_density_is_rejected() {
        let grid = Grid::gauss_legendre(0.0, 1.0, 8).unwrap();
        let rho = FunctionValue::scalar_fn(|x| x.add_scalar(-0.5));
        assert!(matches!(check_positive(&rho, &grid), Err(CliError::NonPositiveDensity { .. })));
        assert!(check_positive(&rho.shift(1.0).unwrap(), &grid).is_ok());
    }

    #[test]
    fn constant_density_gives_the_gradient_free_term() {
        let mut cfg = ExperimentConfig::default_for(Experiment::SemilocalDemo);
        cfg.density = Some(Density::Constant);
        let r = run(&cfg).unwrap();
        let v = r.table("potential.csv").unwrap().column("v").unwrap();
        assert!(v.iter().all(|v| (v - 1.0).abs() < 1e-12), "{v:?}");
    }
}
