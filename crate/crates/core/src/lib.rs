// SPDX-License-Identifier: Apache-2.0

//! Automatic differentiation of higher-order functions.
//!
//! Functions are first-class values ([`FunctionValue`]) built from a small
//! set of primitive operators: `compose`, `nabla`, `linearize`,
//! `linear_transpose` and `integrate`, plus the structural helpers
//! `permute_args`, `zip` and `broadcast`. Every primitive has a forward
//! (JVP) rule and a transpose rule, so reverse mode over a program that
//! ends in an integral yields the functional derivative as a function.

// `!(a < b)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adjoint;
pub mod autodiff;
pub mod engine;
pub mod error;
pub mod memo;
pub mod operators;
pub mod quadrature;
pub mod signature;
pub mod tensor;

pub use autodiff::{functional_grad, op_jvp, op_transpose, op_vjp, trace, OperatorProgram, VarSpec};
pub use engine::{set_strict, CompiledExpr, Expr};
pub use error::{Error, Result};
pub use memo::CallCache;
pub use operators::{FunctionValue, Functional, Integrated};
pub use quadrature::Grid;
pub use signature::{FunctionSignature, TensorShape};
pub use tensor::Tensor;
