// SPDX-License-Identifier: Apache-2.0

//! Numerical adjoint checks: `<O df, dh>` against `<df, O* dh>` for each
//! transposable primitive, with both sides computed by quadrature.

use serde::Serialize;

use crate::autodiff::{op_jvp, op_vjp, trace, Cotangent, OperatorProgram, TransposeGrids, VarSpec};
use crate::engine::Expr;
use crate::error::{Error, Result};
use crate::operators::{compose, integrate, linearize, nabla, permute_args, zip_functions, FunctionValue};
use crate::quadrature::{inner_product_nd, Grid};
use crate::signature::{FunctionSignature, TensorShape};

#[derive(Clone, Debug, Serialize)]
pub struct AdjointCase {
    pub primitive: &'static str,
    /// `<O df, dh>`.
    pub forward: f64,
    /// `<df, O* dh>`.
    pub adjoint: f64,
}

impl AdjointCase {
    pub fn rel_err(&self) -> f64 {
        let scale = self.forward.abs().max(self.adjoint.abs()).max(f64::MIN_POSITIVE);
        (self.forward - self.adjoint).abs() / scale
    }
}

fn s() -> TensorShape {
    TensorShape::scalar()
}

fn window(x: &Expr) -> Result<Expr> {
    Ok(x.mul(x)?.scale(-0.5).exp())
}

fn bump1(a: f64, b: f64) -> FunctionValue {
    FunctionValue::build(vec![s()], |x| window(&x[0])?.mul(&x[0].scale(a).add_scalar(b).sin())).expect("scalar leaf")
}

fn bump2(a: f64, b: f64) -> Result<FunctionValue> {
    FunctionValue::build(vec![s(), s()], |x| {
        let w = window(&x[0])?.mul(&window(&x[1])?)?;
        w.mul(&x[0].scale(a).add(&x[1].scale(b))?.add_scalar(0.3).cos())
    })
}

/// Component `k` of a tuple-valued function.
fn component(f: &FunctionValue, k: usize) -> Result<FunctionValue> {
    let rets = f.signature().rets().to_vec();
    compose(&FunctionValue::projection(rets, k)?, std::slice::from_ref(f))
}

fn grids_for(sig: &FunctionSignature, g: &Grid) -> Vec<Grid> {
    vec![g.clone(); sig.arity()]
}

fn check(
    primitive: &'static str,
    program: &OperatorProgram,
    primals: &[FunctionValue],
    dfs: &[FunctionValue],
    dh: Cotangent,
    grid: &Grid,
) -> Result<AdjointCase> {
    let tangents: Vec<Option<FunctionValue>> = dfs.iter().cloned().map(Some).collect();
    let out = op_jvp(program, primals, &tangents)?.tangent.as_function()?.clone();
    let og = grids_for(out.signature(), grid);
    let forward = match &dh {
        Cotangent::Function(h) => inner_product_nd(&out, h, &og)?,
        Cotangent::Tuple(hs) => {
            let mut acc = 0.0;
            for (k, h) in hs.iter().enumerate() {
                acc += inner_product_nd(&component(&out, k)?, h, &og)?;
            }
            acc
        }
        Cotangent::Scalar(_) => return Err(Error::Unsupported("scalar cotangent in an adjoint check".into())),
    };
    let tg = TransposeGrids::default().with_domain(grid.clone()).with_tangent(grid.clone());
    let cts = op_vjp(program, primals)?.pullback(dh, &tg)?;
    let mut adjoint = 0.0;
    for (df, ct) in dfs.iter().zip(cts) {
        if let Some(ct) = ct {
            adjoint += inner_product_nd(df, &ct, &grids_for(df.signature(), grid))?;
        }
    }
    Ok(AdjointCase { primitive, forward, adjoint })
}

/// Every case on a Gauss-Legendre grid with `n` points over `[a, b]`.
/// Test functions carry a `exp(-x^2 / 2)` window so boundary terms vanish
/// on `[-6, 6]`.
pub fn adjoint_suite(a: f64, b: f64, n: usize) -> Result<Vec<AdjointCase>> {
    let grid = Grid::gauss_legendre(a, b, n)?;
    let sin = FunctionValue::scalar_fn(|x| x.sin());
    let sig1 = FunctionSignature::scalar_fn(1);
    let sig2 = FunctionSignature::scalar_fn(2);
    let mut out = Vec::new();

    let p = trace(&[VarSpec::new(sig1.clone())], |v| Ok(nabla(&v[0], 0)?.into()))?;
    out.push(check(
        "nabla",
        &p,
        std::slice::from_ref(&sin),
        &[bump1(1.3, 0.2)],
        Cotangent::Function(bump1(0.7, 1.0)),
        &grid,
    )?);

    let p = trace(&[VarSpec::new(sig1.clone())], |v| Ok(linearize(&v[0])?.into()))?;
    let dh = FunctionValue::build(vec![s(), s()], |x| {
        window(&x[0])?.mul(&window(&x[1])?)?.mul(&x[1])?.mul(&x[0].scale(0.9).cos())
    })?;
    out.push(check("linearize", &p, std::slice::from_ref(&sin), &[bump1(1.1, -0.4)], Cotangent::Function(dh), &grid)?);

    let g = grid.clone();
    let p = trace(&[VarSpec::new(sig2.clone())], move |v| integrate(&v[0], 1, &g)?.into_function().map(Into::into))?;
    let f2 = FunctionValue::build(vec![s(), s()], |x| x[0].mul(&x[1]))?;
    out.push(check(
        "integrate",
        &p,
        std::slice::from_ref(&f2),
        &[bump2(0.8, -0.5)?],
        Cotangent::Function(bump1(0.6, 0.1)),
        &grid,
    )?);

    let ids = [FunctionValue::projection(vec![s(), s()], 0)?, FunctionValue::projection(vec![s(), s()], 1)?];
    let p = trace(&[VarSpec::new(sig2.clone())], |v| Ok(compose(&v[0], &ids)?.into()))?;
    out.push(check(
        "compose_f",
        &p,
        std::slice::from_ref(&f2),
        &[bump2(1.2, 0.4)?],
        Cotangent::Function(bump2(-0.3, 0.9)?),
        &grid,
    )?);

    // outer (a, b) -> cos(a) * b is linear in b
    let outer = FunctionValue::build(vec![s(), s()], |x| x[0].cos().mul(&x[1]))?;
    let id = FunctionValue::identity(s());
    let p = trace(&[VarSpec::new(sig1.clone())], |v| Ok(compose(&outer, &[id.clone(), v[0].clone()])?.into()))?;
    out.push(check(
        "compose_g",
        &p,
        std::slice::from_ref(&sin),
        &[bump1(1.5, 0.0)],
        Cotangent::Function(bump1(0.4, 0.5)),
        &grid,
    )?);

    let p = trace(&[VarSpec::new(sig2.clone())], |v| Ok(permute_args(&v[0], &[1, 0])?.into()))?;
    out.push(check(
        "permute_args",
        &p,
        std::slice::from_ref(&f2),
        &[bump2(0.7, 1.9)?],
        Cotangent::Function(bump2(1.0, -0.2)?),
        &grid,
    )?);

    let p = trace(&[VarSpec::new(sig1.clone()), VarSpec::new(sig1)], |v| Ok(zip_functions(&v[0], &v[1])?.into()))?;
    let dh = Cotangent::Tuple(vec![bump2(0.5, 0.5)?, bump2(-1.1, 0.2)?]);
    let cosf = FunctionValue::scalar_fn(|x| x.cos());
    out.push(check("zip", &p, &[sin, cosf], &[bump1(0.9, 0.3), bump1(-0.6, 0.8)], dh, &grid)?);
    Ok(out)
}
