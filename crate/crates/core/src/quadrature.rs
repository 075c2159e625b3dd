// SPDX-License-Identifier: Apache-2.0

//! Quadrature grids: the points and weights behind `integrate` and the
//! function inner product.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use crate::error::{Error, Result};
use crate::operators::{EvalSession, FunctionValue};
use crate::signature::TensorShape;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    GaussLegendre,
    Supplied,
    Product,
}

#[derive(Clone, Debug)]
pub struct Grid {
    points: Vec<Tensor>,
    weights: Vec<f64>,
    point_shape: TensorShape,
    kind: GridKind,
    /// Interval per dimension, when known.
    domain: Vec<(f64, f64)>,
    id: u128,
}

fn check_range(a: f64, b: f64, n: usize) -> Result<()> {
    if !(a < b) || n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidRange { a, b, n });
    }
    Ok(())
}

impl Grid {
    fn build(points: Vec<Tensor>, weights: Vec<f64>, kind: GridKind, domain: Vec<(f64, f64)>) -> Result<Grid> {
        let first = points.first().ok_or_else(|| Error::ShapeMismatch("a grid needs at least one point".into()))?;
        let point_shape = first.shape().clone();
        if points.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!("{} points but {} weights", points.len(), weights.len())));
        }
        if let Some(p) = points.iter().find(|p| p.shape() != &point_shape) {
            return Err(Error::ShapeMismatch(format!("grid mixes {} and {point_shape} points", p.shape())));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::DomainError(format!("grid weight {w} is not positive")));
        }
        let mut bytes = Vec::new();
        for (p, w) in points.iter().zip(&weights) {
            p.write_bytes(&mut bytes);
            bytes.extend_from_slice(&w.to_bits().to_le_bytes());
        }
        let id = xxh3_128(&bytes);
        Ok(Grid { points, weights, point_shape, kind, domain, id })
    }

    /// Midpoint rule with `n` cells on `[a, b]`.
    pub fn uniform(a: f64, b: f64, n: usize) -> Result<Grid> {
        check_range(a, b, n)?;
        let h = (b - a) / n as f64;
        let points = (0..n).map(|i| Tensor::scalar(a + (i as f64 + 0.5) * h)).collect();
        Grid::build(points, vec![h; n], GridKind::Uniform, vec![(a, b)])
    }

    /// `n`-point Gauss-Legendre rule on `[a, b]`.
    pub fn gauss_legendre(a: f64, b: f64, n: usize) -> Result<Grid> {
        check_range(a, b, n)?;
        let (x, w) = gauss_legendre_nodes(n)?;
        let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
        let points = x.iter().map(|xi| Tensor::scalar(c + h * xi)).collect();
        let weights = w.iter().map(|wi| h * wi).collect();
        Grid::build(points, weights, GridKind::GaussLegendre, vec![(a, b)])
    }

    pub fn supplied(points: Vec<Tensor>, weights: Vec<f64>) -> Result<Grid> {
        Grid::build(points, weights, GridKind::Supplied, Vec::new())
    }

    /// Tensor product of scalar grids; points are vectors with one entry
    /// per factor.
    pub fn product(factors: &[Grid]) -> Result<Grid> {
        if factors.is_empty() {
            return Err(Error::ShapeMismatch("empty product grid".into()));
        }
        if let Some(g) = factors.iter().find(|g| !g.point_shape.is_scalar()) {
            return Err(Error::ShapeMismatch(format!("product grids need scalar factors, got {}", g.point_shape)));
        }
        let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
        let mut wts = vec![1.0];
        for g in factors {
            let mut np = Vec::with_capacity(pts.len() * g.len());
            let mut nw = Vec::with_capacity(pts.len() * g.len());
            for (p, w) in pts.iter().zip(&wts) {
                for (q, v) in g.points.iter().zip(&g.weights) {
                    let mut r = p.clone();
                    r.push(q.item());
                    np.push(r);
                    nw.push(w * v);
                }
            }
            pts = np;
            wts = nw;
        }
        let domain = factors.iter().flat_map(|g| g.domain.iter().copied()).collect();
        Grid::build(pts.iter().map(|p| Tensor::vector(p)).collect(), wts, GridKind::Product, domain)
    }

    pub fn points(&self) -> &[Tensor] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point_shape(&self) -> &TensorShape {
        &self.point_shape
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn domain(&self) -> &[(f64, f64)] {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Content hash of points and weights.
    pub fn id(&self) -> u128 {
        self.id
    }

    /// Scalar coordinates of a 1-D grid.
    pub fn xs(&self) -> Vec<f64> {
        self.points.iter().map(Tensor::item).collect()
    }

    /// `sum_i w_i f(x_i)` for a plain closure over scalar points.
    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        let terms: Vec<f64> = self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p.item())).collect();
        pairwise_sum_f64(&terms)
    }
}

fn gauss_legendre_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut converged = false;
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-14 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::ConvergenceFailure(n));
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    Ok((x, w))
}

pub fn pairwise_sum_f64(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum_f64(&v[..mid]) + pairwise_sum_f64(&v[mid..])
}

/// Reproducible sum of equally shaped tensors.
pub fn pairwise_sum(v: &[Tensor]) -> Tensor {
    match v.len() {
        0 => Tensor::scalar(0.0),
        1 => v[0].clone(),
        _ => {
            let mid = v.len() / 2;
            tensor::zip_with(&pairwise_sum(&v[..mid]), &pairwise_sum(&v[mid..]), |a, b| a + b)
        }
    }
}

/// `sum_i w_i <f(x_i), g(x_i)>` for single-argument functions.
pub fn inner_product(f: &FunctionValue, g: &FunctionValue, grid: &Grid) -> Result<f64> {
    inner_product_nd(f, g, std::slice::from_ref(grid))
}

/// Inner product over the product of one grid per argument. Tuple-valued
/// functions contract every return slot.
pub fn inner_product_nd(f: &FunctionValue, g: &FunctionValue, grids: &[Grid]) -> Result<f64> {
    if f.signature() != g.signature() {
        return Err(Error::ShapeMismatch(format!("inner product of {} with {}", f.signature(), g.signature())));
    }
    let args = f.signature().args();
    if grids.len() != args.len() {
        return Err(Error::ArityMismatch { expected: args.len(), actual: grids.len() });
    }
    for (a, gr) in args.iter().zip(grids) {
        if a != gr.point_shape() {
            return Err(Error::ShapeMismatch(format!("grid points are {} but the argument is {a}", gr.point_shape())));
        }
    }
    let mut session = EvalSession::new().with_cache(crate::memo::CallCache::with_capacity(1 << 20));
    let fc = f.compiled().ok();
    let gc = g.compiled().ok();
    let mut eval = |h: &FunctionValue, c: &Option<Arc<crate::engine::CompiledExpr>>, x: &[Tensor]| match c {
        Some(c) => c.eval(x, &[]),
        None => h.eval_in(x, &mut session),
    };
    let mut terms = Vec::new();
    let mut idx = vec![0usize; grids.len()];
    'outer: loop {
        let point: Vec<Tensor> = idx.iter().zip(grids).map(|(&i, g)| g.points[i].clone()).collect();
        let w: f64 = idx.iter().zip(grids).map(|(&i, g)| g.weights[i]).product();
        let fv = eval(f, &fc, &point)?;
        let gv = eval(g, &gc, &point)?;
        terms.push(w * fv.iter().zip(&gv).map(|(a, b)| a.dot_all(b)).sum::<f64>());
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < grids[k].len() {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    Ok(pairwise_sum_f64(&terms))
}

/// Grid description as it appears in config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Uniform { a: f64, b: f64, n: usize },
    GaussLegendre { a: f64, b: f64, n: usize },
    Supplied { points: Vec<f64>, weights: Vec<f64> },
}

impl GridSpec {
    pub fn build(&self) -> Result<Arc<Grid>> {
        let g = match self {
            GridSpec::Uniform { a, b, n } => Grid::uniform(*a, *b, *n)?,
            GridSpec::GaussLegendre { a, b, n } => Grid::gauss_legendre(*a, *b, *n)?,
            GridSpec::Supplied { points, weights } => {
                Grid::supplied(points.iter().map(|p| Tensor::scalar(*p)).collect(), weights.clone())?
            }
        };
        Ok(Arc::new(g))
    }
}
