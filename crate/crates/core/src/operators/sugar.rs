// SPDX-License-Identifier: Apache-2.0

//! Pointwise arithmetic on function values, desugared to `compose` with a
//! leaf.

use super::{broadcast_fn, compose, integrate, FunctionValue, Integrated};
use crate::engine::Expr;
use crate::error::{Error, Result};
use crate::quadrature::Grid;

impl FunctionValue {
    /// `x -> op(self(x), other(x))`.
    pub fn zip_with(
        &self,
        other: &FunctionValue,
        op: impl FnOnce(&Expr, &Expr) -> Result<Expr>,
    ) -> Result<FunctionValue> {
        if self.signature().args() != other.signature().args() {
            return Err(Error::ShapeMismatch(format!(
                "pointwise operands {} and {} take different arguments",
                self.signature(),
                other.signature()
            )));
        }
        let shapes = vec![self.signature().ret()?.clone(), other.signature().ret()?.clone()];
        let leaf = FunctionValue::build(shapes, |x| op(&x[0], &x[1]))?;
        compose(&leaf, &[self.clone(), other.clone()])
    }

    /// `x -> op(self(x))`.
    pub fn map(&self, op: impl FnOnce(Expr) -> Result<Expr>) -> Result<FunctionValue> {
        let leaf = FunctionValue::build(vec![self.signature().ret()?.clone()], |x| op(x[0].clone()))?;
        compose(&leaf, std::slice::from_ref(self))
    }

    pub fn add(&self, o: &FunctionValue) -> Result<FunctionValue> {
        self.zip_with(o, |a, b| a.add(b))
    }
    pub fn sub(&self, o: &FunctionValue) -> Result<FunctionValue> {
        self.zip_with(o, |a, b| a.sub(b))
    }
    pub fn mul(&self, o: &FunctionValue) -> Result<FunctionValue> {
        self.zip_with(o, |a, b| a.mul(b))
    }
    pub fn div(&self, o: &FunctionValue) -> Result<FunctionValue> {
        self.zip_with(o, |a, b| a.div(b))
    }
    pub fn pow(&self, o: &FunctionValue) -> Result<FunctionValue> {
        self.zip_with(o, |a, b| a.pow(b))
    }
    pub fn powf(&self, p: f64) -> Result<FunctionValue> {
        self.map(|x| Ok(x.powf(p)))
    }
    pub fn square(&self) -> Result<FunctionValue> {
        self.map(|x| x.mul(&x))
    }
    pub fn neg(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.neg()))
    }
    pub fn sqrt(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.sqrt()))
    }
    pub fn tanh(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.tanh()))
    }
    pub fn sin(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.sin()))
    }
    pub fn cos(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.cos()))
    }
    pub fn exp(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.exp()))
    }
    pub fn ln(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.ln()))
    }
    pub fn scale(&self, c: f64) -> Result<FunctionValue> {
        self.map(|x| Ok(x.scale(c)))
    }
    pub fn shift(&self, c: f64) -> Result<FunctionValue> {
        self.map(|x| Ok(x.add_scalar(c)))
    }
    /// Full contraction of a tensor-valued function with itself.
    pub fn sum_squares(&self) -> Result<FunctionValue> {
        self.map(|x| Ok(x.mul(&x)?.sum()))
    }
}

/// `x -> integral k(x, y) f(y) dy` for a two-argument kernel.
pub fn integral_transform(k: &FunctionValue, f: &FunctionValue, grid: &Grid) -> Result<FunctionValue> {
    if k.arity() != 2 || f.arity() != 1 {
        return Err(Error::ArityMismatch { expected: 2, actual: k.arity() });
    }
    let x_shape = k.signature().args()[0].clone();
    let fb = broadcast_fn(f, &[x_shape], &[0])?;
    match integrate(&k.mul(&fb)?, 1, grid)? {
        Integrated::Function(g) => Ok(g),
        Integrated::Scalar(_) => unreachable!("one argument remains"),
    }
}
