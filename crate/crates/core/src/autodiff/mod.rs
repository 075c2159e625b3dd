// SPDX-License-Identifier: Apache-2.0

//! Forward and reverse mode over function graphs.
//!
//! An [`OperatorProgram`] maps input functions (traced as variables) to a
//! function or a functional value. [`op_jvp`] pushes function tangents
//! through it with each primitive's JVP rule; [`op_vjp`] records the linear
//! part of that JVP as a [`LinearTrace`] and [`op_transpose`] walks it
//! backwards with the transpose rules.

mod transpose;

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::operators::{
    broadcast_fn, compose, fresh_var_id, linear_transpose, linearize, nabla, permute_args, zip_functions, Body,
    FunctionValue, Functional, Integrated, VarId,
};
use crate::quadrature::Grid;
use crate::signature::FunctionSignature;
use crate::tensor::Tensor;

pub use transpose::{op_transpose, Cotangent, LinearTrace, Slot, TraceRecord, TransposeGrids};

/// Declared input of an operator program.
#[derive(Clone, Debug)]
pub struct VarSpec {
    pub sig: FunctionSignature,
    /// Slots in which every admissible input is jointly linear.
    pub linear: Vec<bool>,
}

impl VarSpec {
    pub fn new(sig: FunctionSignature) -> VarSpec {
        let n = sig.arity();
        VarSpec { sig, linear: vec![false; n] }
    }

    pub fn scalar_fn() -> VarSpec {
        VarSpec::new(FunctionSignature::scalar_fn(1))
    }

    pub fn with_linear(mut self, linear: Vec<bool>) -> VarSpec {
        self.linear = linear;
        self
    }

    fn mask(&self) -> u64 {
        self.linear.iter().enumerate().filter(|(_, l)| **l).fold(0, |m, (i, _)| m | (1 << i))
    }
}

/// Output of an operator program.
#[derive(Clone, Debug)]
pub enum Value {
    Function(FunctionValue),
    Scalar(Functional),
}

impl From<FunctionValue> for Value {
    fn from(f: FunctionValue) -> Self {
        Value::Function(f)
    }
}

impl From<Functional> for Value {
    fn from(f: Functional) -> Self {
        Value::Scalar(f)
    }
}

impl From<Integrated> for Value {
    fn from(i: Integrated) -> Self {
        match i {
            Integrated::Function(f) => Value::Function(f),
            Integrated::Scalar(s) => Value::Scalar(s),
        }
    }
}

impl Value {
    pub fn as_function(&self) -> Result<&FunctionValue> {
        match self {
            Value::Function(f) => Ok(f),
            Value::Scalar(_) => Err(Error::Unsupported("expected a function, got a functional value".into())),
        }
    }

    pub fn as_functional(&self) -> Result<&Functional> {
        match self {
            Value::Scalar(s) => Ok(s),
            Value::Function(_) => Err(Error::IntegrationRequired),
        }
    }

    fn root(&self) -> &FunctionValue {
        match self {
            Value::Function(f) => f,
            Value::Scalar(s) => &s.integrand,
        }
    }

    fn with_root(&self, f: FunctionValue) -> Value {
        match self {
            Value::Function(_) => Value::Function(f),
            Value::Scalar(s) => Value::Scalar(Functional { integrand: f, grid: s.grid.clone() }),
        }
    }

    pub fn node_count(&self) -> usize {
        self.root().node_count()
    }
}

/// A traced map from input functions to an output value.
#[derive(Clone, Debug)]
pub struct OperatorProgram {
    inputs: Vec<FunctionValue>,
    output: Value,
}

/// Trace `build` on fresh variables for `inputs`.
pub fn trace(inputs: &[VarSpec], build: impl FnOnce(&[FunctionValue]) -> Result<Value>) -> Result<OperatorProgram> {
    let vars: Vec<FunctionValue> =
        inputs.iter().map(|s| FunctionValue::var(fresh_var_id(), s.sig.clone(), s.mask())).collect();
    let output = build(&vars)?;
    Ok(OperatorProgram { inputs: vars, output })
}

impl OperatorProgram {
    pub fn inputs(&self) -> &[FunctionValue] {
        &self.inputs
    }

    pub fn output(&self) -> &Value {
        &self.output
    }

    fn var_ids(&self) -> Vec<VarId> {
        self.inputs.iter().map(|v| v.var_id().expect("inputs are variables")).collect()
    }

    fn check_inputs(&self, fs: &[FunctionValue]) -> Result<()> {
        if fs.len() != self.inputs.len() {
            return Err(Error::ArityMismatch { expected: self.inputs.len(), actual: fs.len() });
        }
        for (v, f) in self.inputs.iter().zip(fs) {
            if v.signature() != f.signature() {
                return Err(Error::ShapeMismatch(format!("input expects {}, got {}", v.signature(), f.signature())));
            }
        }
        Ok(())
    }

    /// Apply the program to concrete input functions.
    pub fn apply(&self, fs: &[FunctionValue]) -> Result<Value> {
        self.check_inputs(fs)?;
        let env: HashMap<VarId, FunctionValue> = self.var_ids().into_iter().zip(fs.iter().cloned()).collect();
        Ok(self.output.with_root(substitute_vars(self.output.root(), &env)?))
    }
}

/// Replace variables by functions, rebuilding only the affected nodes.
pub fn substitute_vars(root: &FunctionValue, env: &HashMap<VarId, FunctionValue>) -> Result<FunctionValue> {
    let mut done: HashMap<u128, FunctionValue> = HashMap::new();
    for n in root.topo() {
        if !n.has_vars() {
            continue;
        }
        let new = match n.body() {
            Body::Var(v) => env.get(v).cloned().unwrap_or_else(|| n.clone()),
            body => {
                let kids: Vec<FunctionValue> = body
                    .children()
                    .iter()
                    .map(|c| done.get(&c.id()).cloned().unwrap_or_else(|| (*c).clone()))
                    .collect();
                n.with_children(kids)?
            }
        };
        done.insert(n.id(), new);
    }
    Ok(done.get(&root.id()).cloned().unwrap_or_else(|| root.clone()))
}

fn zero_like(f: &FunctionValue) -> Result<FunctionValue> {
    if f.signature().is_tuple() {
        return Err(Error::Unsupported(format!("zero tangent for tuple-valued {}", f.signature())));
    }
    FunctionValue::zeros(f.signature())
}

fn add_opt(a: Option<FunctionValue>, b: Option<FunctionValue>) -> Result<Option<FunctionValue>> {
    Ok(match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(a.add(&b)?),
    })
}

type Pair = (FunctionValue, Option<FunctionValue>);

/// Apply the JVP rule of one node given its children's primal/tangent pairs.
fn jvp_rule(n: &FunctionValue, kids: &[Pair]) -> Result<Pair> {
    let primals: Vec<FunctionValue> = kids.iter().map(|k| k.0.clone()).collect();
    let primal = n.with_children(primals.clone())?;
    if kids.iter().all(|k| k.1.is_none()) {
        return Ok((primal, None));
    }
    let t0 = || kids[0].1.clone();
    let tangent = match n.body() {
        Body::Leaf(_) | Body::Var(_) => None,
        Body::Compose(..) => {
            let (pf, tf) = (&kids[0].0, &kids[0].1);
            let inner = &kids[1..];
            let pgs: Vec<FunctionValue> = inner.iter().map(|k| k.0.clone()).collect();
            let from_f = tf.as_ref().map(|tf| compose(tf, &pgs)).transpose()?;
            let from_g = if inner.iter().any(|k| k.1.is_some()) {
                let mut ops = pgs.clone();
                for k in inner {
                    ops.push(match &k.1 {
                        Some(t) => t.clone(),
                        None => zero_like(&k.0)?,
                    });
                }
                Some(compose(&linearize(pf)?, &ops)?)
            } else {
                None
            };
            add_opt(from_f, from_g)?
        }
        Body::Nabla(_, a) => t0().map(|t| nabla(&t, *a)).transpose()?,
        Body::Linearize(_) => t0().map(|t| linearize(&t)).transpose()?,
        Body::LinearTranspose(_, a) => t0().map(|t| linear_transpose(&t, *a)).transpose()?,
        Body::Integrate(_, a, g) => {
            t0().map(|t| crate::operators::integrate_arc(&t, *a, g.clone())?.into_function()).transpose()?
        }
        Body::PermuteArgs(_, p) => t0().map(|t| permute_args(&t, p)).transpose()?,
        Body::Broadcast(_, s, p) => t0().map(|t| broadcast_fn(&t, s, p)).transpose()?,
        Body::Zip(..) => {
            let tf = match &kids[0].1 {
                Some(t) => t.clone(),
                None => zero_like(&kids[0].0)?,
            };
            let tg = match &kids[1].1 {
                Some(t) => t.clone(),
                None => zero_like(&kids[1].0)?,
            };
            Some(zip_functions(&tf, &tg)?)
        }
    };
    Ok((primal, tangent))
}

/// Push tangents through a graph. `env` maps variables to primal/tangent
/// pairs; nodes without variables have zero tangent.
fn jvp_graph(root: &FunctionValue, env: &HashMap<VarId, Pair>) -> Result<Pair> {
    let mut done: HashMap<u128, Pair> = HashMap::new();
    for n in root.topo() {
        if !n.has_vars() {
            continue;
        }
        let pair = match n.body() {
            Body::Var(v) => env.get(v).cloned().unwrap_or_else(|| (n.clone(), None)),
            body => {
                let kids: Vec<Pair> = body
                    .children()
                    .iter()
                    .map(|c| done.get(&c.id()).cloned().unwrap_or_else(|| ((*c).clone(), None)))
                    .collect();
                jvp_rule(&n, &kids)?
            }
        };
        done.insert(n.id(), pair);
    }
    Ok(done.get(&root.id()).cloned().unwrap_or_else(|| (root.clone(), None)))
}

/// Primal output and its directional derivative.
#[derive(Clone, Debug)]
pub struct OperatorTangent {
    pub primal: Value,
    pub tangent: Value,
}

/// Forward mode over an operator program. A `None` tangent is zero.
pub fn op_jvp(
    program: &OperatorProgram,
    primals: &[FunctionValue],
    tangents: &[Option<FunctionValue>],
) -> Result<OperatorTangent> {
    program.check_inputs(primals)?;
    if tangents.len() != primals.len() {
        return Err(Error::ArityMismatch { expected: primals.len(), actual: tangents.len() });
    }
    for (p, t) in primals.iter().zip(tangents) {
        if let Some(t) = t {
            if t.signature() != p.signature() {
                return Err(Error::ShapeMismatch(format!("tangent {} for primal {}", t.signature(), p.signature())));
            }
        }
    }
    let env: HashMap<VarId, Pair> =
        program.var_ids().into_iter().zip(primals.iter().cloned().zip(tangents.iter().cloned())).collect();
    let root = program.output.root();
    let (p, t) = jvp_graph(root, &env)?;
    let t = match t {
        Some(t) => t,
        None => zero_like(&p)?,
    };
    Ok(OperatorTangent { primal: program.output.with_root(p), tangent: program.output.with_root(t) })
}

/// Result of [`op_vjp`]: the primal output and the recorded linear program.
#[derive(Clone, Debug)]
pub struct Vjp {
    pub primal: Value,
    pub trace: LinearTrace,
}

impl Vjp {
    /// Cotangents for each program input (`None` is zero).
    pub fn pullback(&self, ct: Cotangent, grids: &TransposeGrids) -> Result<Vec<Option<FunctionValue>>> {
        op_transpose(&self.trace, ct, grids)
    }
}

/// Linearize the program at `primals` with fresh tangent variables and
/// record the linear part for transposition.
pub fn op_vjp(program: &OperatorProgram, primals: &[FunctionValue]) -> Result<Vjp> {
    program.check_inputs(primals)?;
    let tvars: Vec<FunctionValue> =
        primals.iter().map(|p| FunctionValue::var(fresh_var_id(), p.signature().clone(), p.linear_mask())).collect();
    let tangents: Vec<Option<FunctionValue>> = tvars.iter().cloned().map(Some).collect();
    let jvp = op_jvp(program, primals, &tangents)?;
    let ids: Vec<VarId> = tvars.iter().map(|v| v.var_id().expect("variable")).collect();
    let grid: Option<Arc<Grid>> = match &jvp.tangent {
        Value::Scalar(s) => Some(s.grid.clone()),
        Value::Function(_) => None,
    };
    let trace = LinearTrace::record(jvp.tangent.root(), &ids, grid)?;
    Ok(Vjp { primal: jvp.primal, trace })
}

fn seed_for(program: &OperatorProgram) -> Result<Tensor> {
    let f = program.output.as_functional()?;
    let shape = f.shape()?;
    if !shape.is_scalar() {
        return Err(Error::ShapeMismatch(format!("functional gradient needs a scalar functional, got {shape}")));
    }
    Ok(Tensor::scalar(1.0))
}

/// Functional derivatives with respect to every program input.
pub fn functional_grad_many(
    program: &OperatorProgram,
    primals: &[FunctionValue],
    grids: &TransposeGrids,
) -> Result<Vec<FunctionValue>> {
    let seed = seed_for(program)?;
    let vjp = op_vjp(program, primals)?;
    let cts = vjp.pullback(Cotangent::Scalar(seed), grids)?;
    cts.into_iter()
        .zip(primals)
        .map(|(c, p)| match c {
            Some(c) => Ok(c),
            None => FunctionValue::zeros(p.signature()),
        })
        .collect()
}

/// `δF/δf` as a function with `f`'s signature. The program must end in an
/// integral over all arguments.
pub fn functional_grad(program: &OperatorProgram, f: &FunctionValue) -> Result<FunctionValue> {
    functional_grad_with(program, f, &TransposeGrids::default())
}

pub fn functional_grad_with(
    program: &OperatorProgram,
    f: &FunctionValue,
    grids: &TransposeGrids,
) -> Result<FunctionValue> {
    Ok(functional_grad_many(program, std::slice::from_ref(f), grids)?.remove(0))
}
