// SPDX-License-Identifier: Apache-2.0

//! Shared fixtures for the criterion benches in `benches/`.

use opdiff_core::autodiff::{trace, OperatorProgram, VarSpec};
use opdiff_core::operators::{compose, integrate, nabla};
use opdiff_core::{FunctionValue, Grid, Result, TensorShape};

/// `f -> nabla f`.
pub fn nabla_program() -> Result<OperatorProgram> {
    trace(&[VarSpec::scalar_fn()], |v| Ok(nabla(&v[0], 0)?.into()))
}

/// `f -> int (f'^2 + f^4) dx`.
pub fn semilocal_program(grid: &Grid) -> Result<OperatorProgram> {
    let s = TensorShape::scalar();
    let phi = FunctionValue::build(vec![s.clone(); 3], |a| a[2].mul(&a[2])?.add(&a[1].powf(4.0)))?;
    let id = FunctionValue::identity(s);
    trace(&[VarSpec::scalar_fn()], |v| {
        let local = compose(&phi, &[id.clone(), v[0].clone(), nabla(&v[0], 0)?])?;
        Ok(integrate(&local, 0, grid)?.into_functional()?.into())
    })
}

pub fn sin() -> FunctionValue {
    FunctionValue::scalar_fn(|x| x.sin())
}
