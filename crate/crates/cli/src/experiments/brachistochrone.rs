// SPDX-License-Identifier: Apache-2.0

//! Shortest-time curve from (0, 0) to (1, -1) with a network ansatz.
//!
//! Three parameter-gradient estimators are available. `minimize_F`
//! differentiates the quadrature sum of the integrand, `minimize_F_via_FD`
//! chains the functional derivative with `dy/dtheta`, and `minimize_FD`
//! descends on the squared norm of the functional derivative.

use std::f64::consts::PI;
use std::sync::Arc;

use opdiff_core::autodiff::{functional_grad, trace, VarSpec};
use opdiff_core::engine::grad_params;
use opdiff_core::operators::{compose, graph_json, integrate_arc, nabla};
use opdiff_core::quadrature::pairwise_sum_f64;
use opdiff_core::{CompiledExpr, Expr, FunctionValue, Grid, Tensor, TensorShape};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Estimator, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::optim::Optimizer;
use crate::report::{RunReport, StepRecord, Table};

/// Dense network `R -> R` with sigmoid hidden layers; weights are engine
/// parameters in layer order `W, b`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Vec<usize>,
}

impl Mlp {
    pub fn param_shapes(&self) -> Vec<TensorShape> {
        let mut out = Vec::new();
        let mut prev: Option<usize> = None;
        for &h in &self.hidden {
            out.push(match prev {
                None => TensorShape::vector(h),
                Some(p) => TensorShape::new(&[h, p]),
            });
            out.push(TensorShape::vector(h));
            prev = Some(h);
        }
        out.push(TensorShape::vector(prev.expect("at least one hidden layer")));
        out.push(TensorShape::scalar());
        out
    }

    /// Uniform Glorot-style hidden weights and a zero output layer, so the
    /// initial ansatz is the straight line.
    pub fn init(&self, seed: u64) -> Vec<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = self.param_shapes();
        let last = shapes.len() - 2;
        shapes
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i >= last {
                    return Tensor::zeros(s);
                }
                let (fan_out, fan_in) = match s.dims() {
                    [o, i] => (*o, *i),
                    [o] => (*o, 1),
                    _ => (1, 1),
                };
                let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let v = (0..s.numel()).map(|_| rng.random_range(-r..r)).collect();
                Tensor::new(s, v).expect("sized from the shape")
            })
            .collect()
    }

    pub fn expr(&self, x: &Expr) -> Result<Expr> {
        let shapes = self.param_shapes();
        let p = |i: usize| Expr::param(i, shapes[i].clone());
        let mut h = p(0).mul(x)?.add(&p(1))?.sigmoid();
        let mut k = 2;
        for _ in 1..self.hidden.len() {
            h = p(k).dot(&h)?.add(&p(k + 1))?.sigmoid();
            k += 2;
        }
        Ok(p(k).dot(&h)?.add(&p(k + 1))?)
    }
}

/// A variational problem `F(y) = int L(x, y, y') dx` over a parametric
/// ansatz `y(x; theta)`.
pub struct Variational {
    pub param_shapes: Vec<TensorShape>,
    pub grid: Arc<Grid>,
    /// `y` as a function with engine parameters.
    pub y: FunctionValue,
    /// `dF/dy` from reverse mode through the operator program.
    pub dfdy: FunctionValue,
    /// Integrand `L(x, y(x), y'(x))` over `x` and the parameters.
    pub integrand: Expr,
    y_tape: CompiledExpr,
}

impl Variational {
    pub fn new(
        ansatz: Expr,
        param_shapes: Vec<TensorShape>,
        lagrangian: impl Fn(&Expr, &Expr, &Expr) -> Result<Expr>,
        grid: Arc<Grid>,
    ) -> Result<Variational> {
        let s = TensorShape::scalar();
        let y = FunctionValue::leaf(ansatz, vec![s.clone()])?;
        let lag = FunctionValue::build(vec![s.clone(); 3], |a| {
            lagrangian(&a[0], &a[1], &a[2]).map_err(|e| match e {
                CliError::Core(c) => c,
                other => opdiff_core::Error::Unsupported(other.to_string()),
            })
        })?;
        let id = FunctionValue::identity(s);
        let g = grid.clone();
        let program = trace(&[VarSpec::scalar_fn()], |v| {
            let local = compose(&lag, &[id.clone(), v[0].clone(), nabla(&v[0], 0)?])?;
            Ok(integrate_arc(&local, 0, g)?.into_functional()?.into())
        })?;
        let dfdy = functional_grad(&program, &y)?;
        let local = compose(&lag, &[FunctionValue::identity(TensorShape::scalar()), y.clone(), nabla(&y, 0)?])?;
        let integrand = local.lower_one()?;
        let y_tape = CompiledExpr::new(&[y.lower_one()?]);
        Ok(Variational { param_shapes, grid, y, dfdy, integrand, y_tape })
    }

    /// Compile the diagnostics `[y, L, dF/dy]` followed by the parameter
    /// gradient integrand of `estimator`.
    pub fn compile(&self, estimator: Estimator) -> Result<CompiledExpr> {
        let n = 1;
        let y = self.y.lower_one()?;
        let fd = self.dfdy.lower_one()?;
        let mut roots = vec![y.clone(), self.integrand.clone(), fd.clone()];
        match estimator {
            Estimator::MinimizeF => roots.extend(grad_params(&self.integrand, n, &self.param_shapes)?),
            Estimator::MinimizeFViaFd => {
                for g in grad_params(&y, n, &self.param_shapes)? {
                    roots.push(g.mul(&fd)?);
                }
            }
            Estimator::MinimizeFd => roots.extend(grad_params(&fd.mul(&fd)?, n, &self.param_shapes)?),
        }
        Ok(CompiledExpr::new(&roots))
    }
}

/// Weighted sums of every compiled output over the grid.
pub struct Evaluation {
    pub ys: Vec<f64>,
    pub dfdy: Vec<f64>,
    pub value: f64,
    pub fd_norm: f64,
    pub grads: Vec<Tensor>,
}

pub fn evaluate(v: &Variational, c: &CompiledExpr, params: &[Tensor], check_sign: bool) -> Result<Evaluation> {
    let np = v.param_shapes.len();
    let mut ys = Vec::with_capacity(v.grid.len());
    let mut dfdy = Vec::with_capacity(v.grid.len());
    let mut value = Vec::new();
    let mut norm = Vec::new();
    let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); np];
    for (x, w) in v.grid.points().iter().zip(v.grid.weights()) {
        let y = v.y_tape.eval(std::slice::from_ref(x), params)?[0].item();
        if check_sign && y >= 0.0 {
            return Err(CliError::SingularIntegrand { x: x.item(), y });
        }
        let out = c.eval(std::slice::from_ref(x), params)?;
        ys.push(out[0].item());
        value.push(w * out[1].item());
        let fd = out[2].item();
        dfdy.push(fd);
        norm.push(w * fd * fd);
        for k in 0..np {
            grads[k].push(out[3 + k].data().iter().map(|g| w * g).collect());
        }
    }
    let grads = grads
        .into_iter()
        .zip(&v.param_shapes)
        .map(|(rows, s)| {
            let m = s.numel();
            let data = (0..m).map(|j| pairwise_sum_f64(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
            Tensor::new(s.clone(), data).map_err(CliError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { ys, dfdy, value: pairwise_sum_f64(&value), fd_norm: pairwise_sum_f64(&norm), grads })
}

/// `sqrt(1 + y'^2) / sqrt(-y)`.
pub fn travel_time(_x: &Expr, y: &Expr, dy: &Expr) -> Result<Expr> {
    Ok(dy.mul(dy)?.add_scalar(1.0).sqrt().div(&y.neg().sqrt())?)
}

/// `y = net(x) sin(pi x) - x`.
pub fn ansatz(mlp: &Mlp) -> Result<Expr> {
    let x = Expr::arg(0, TensorShape::scalar())?;
    Ok(mlp.expr(&x)?.mul(&x.scale(PI).sin())?.sub(&x)?)
}

pub fn problem(mlp: &Mlp, grid: Arc<Grid>) -> Result<Variational> {
    Variational::new(ansatz(mlp)?, mlp.param_shapes(), travel_time, grid)
}

/// The cycloid through (0, 0) and (1, -1): `x = a (t - sin t)`,
/// `y = -a (1 - cos t)` with `t` in `[0, T]`.
pub fn cycloid(x: f64) -> f64 {
    // T solves 1 - cos T = T - sin T on (0, 2 pi)
    let g = |t: f64| (t - t.sin()) - (1.0 - t.cos());
    let big_t = bisect(g, 1.0, 2.0 * PI - 1e-9);
    let a = 1.0 / (1.0 - big_t.cos());
    let t = bisect(|t| a * (t - t.sin()) - x, 0.0, big_t);
    -a * (1.0 - t.cos())
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `y = -x + x (1 - x) (t0 + t1 x + t2 x^2)` with
/// `L = (y'^2 + y^2) / 2 + x y`. Every integrand is a polynomial of degree
/// at most 8 and `dy/dt` vanishes at both ends.
pub fn polynomial_problem(grid: Arc<Grid>) -> Result<Variational> {
    let s = TensorShape::scalar();
    let x = Expr::arg(0, s.clone())?;
    let t = |i: usize| Expr::param(i, s.clone());
    let poly = t(0).add(&t(1).mul(&x)?)?.add(&t(2).mul(&x.mul(&x)?)?)?;
    let bubble = x.mul(&x.neg().add_scalar(1.0))?;
    let ansatz = bubble.mul(&poly)?.sub(&x)?;
    let lagrangian = |x: &Expr, y: &Expr, dy: &Expr| -> Result<Expr> {
        Ok(dy.mul(dy)?.add(&y.mul(y)?)?.scale(0.5).add(&x.mul(y)?)?)
    };
    Variational::new(ansatz, vec![s; 3], lagrangian, grid)
}

/// Parameter gradients from `minimize_F` and `minimize_F_via_FD`.
pub fn estimator_gradients(v: &Variational, params: &[Tensor]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let direct = evaluate(v, &v.compile(Estimator::MinimizeF)?, params, false)?.grads;
    let chained = evaluate(v, &v.compile(Estimator::MinimizeFViaFd)?, params, false)?.grads;
    Ok((direct, chained))
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(cfg);
    let mlp = Mlp { hidden: cfg.hidden.clone().unwrap_or_else(|| vec![16, 16]) };
    let grid = cfg.grid.build()?;
    let v = problem(&mlp, grid.clone())?;
    let estimator = cfg.estimator.unwrap_or(Estimator::MinimizeFd);
    let compiled = v.compile(estimator)?;
    let mut params = mlp.init(cfg.optimizer.seed);
    let mut opt = Optimizer::new(&cfg.optimizer);
    let mut last = None;
    for step in 0..=cfg.optimizer.steps {
        let e = evaluate(&v, &compiled, &params, true)?;
        report.steps.push(StepRecord { step, loss: e.value, grad_norm: e.fd_norm, nodes: None });
        if step < cfg.optimizer.steps {
            opt.step(&mut params, &e.grads);
        }
        last = Some(e);
    }
    let e = last.expect("at least one evaluation");
    let mut curve = Table::new("curve.csv", &["x", "y", "cycloid", "dfdy"]);
    let mut dev = 0.0f64;
    for (i, x) in grid.xs().into_iter().enumerate() {
        let c = cycloid(x);
        dev = dev.max((e.ys[i] - c).abs());
        curve.push(vec![x, e.ys[i], c, e.dfdy[i]]);
    }
    report.tables.push(curve);
    let first = report.steps[0].grad_norm;
    report.metrics.insert("initial_fd_norm".into(), first);
    report.metrics.insert("final_fd_norm".into(), e.fd_norm);
    report.metrics.insert("fd_norm_ratio".into(), e.fd_norm / first);
    report.metrics.insert("cycloid_max_deviation".into(), dev);
    report.metrics.insert("final_travel_time".into(), e.value);
    report.graph = Some(graph_json(&v.dfdy));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimators_agree_under_exact_quadrature() {
        let grid = Arc::new(Grid::gauss_legendre(0.0, 1.0, 8).unwrap());
        let v = polynomial_problem(grid).unwrap();
        let params: Vec<Tensor> = [0.3, -0.7, 1.1].into_iter().map(Tensor::scalar).collect();
        let (a, b) = estimator_gradients(&v, &params).unwrap();
        for (a, b) in a.iter().zip(&b) {
            let (a, b) = (a.item(), b.item());
            assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn cycloid_hits_endpoints() {
        assert!(cycloid(0.0).abs() < 1e-12);
        assert!((cycloid(1.0) + 1.0).abs() < 1e-9);
        // steeper than the straight line near the start
        assert!(cycloid(0.1) < -0.1);
    }

    #[test]
    fn straight_line_derivative() {
        // y = -x gives dF/dy = x^(-3/2) / (2 sqrt 2)
        let grid = Arc::new(Grid::uniform(0.01, 1.0, 10).unwrap());
        let mlp = Mlp { hidden: vec![3] };
        let v = problem(&mlp, grid).unwrap();
        let c = v.compile(Estimator::MinimizeFd).unwrap();
        let e = evaluate(&v, &c, &mlp.init(1), true).unwrap();
        for (x, fd) in v.grid.xs().iter().zip(&e.dfdy) {
            let want = x.powf(-1.5) / (2.0 * 2f64.sqrt());
            assert!((fd - want).abs() < 1e-9 * want, "{fd} vs {want}");
        }
    }
}
