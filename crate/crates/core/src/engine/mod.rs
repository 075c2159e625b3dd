// SPDX-License-Identifier: Apache-2.0

//! First-order expression graphs over tensors.
//!
//! An [`Expr`] is an immutable DAG whose leaves are constants, argument
//! references and external parameters. The engine evaluates them, pushes
//! tangents forward ([`Expr::jvp`], [`jacobian`]) and transposes linear
//! expressions ([`transpose1`]). Reverse mode is transposition of the
//! forward-mode linearization.

mod diff;
mod eval;
mod print;
mod transpose;

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use xxhash_rust::xxh3::Xxh3;

use crate::error::{Error, Result};
use crate::signature::TensorShape;
use crate::tensor::{self, Tensor};

pub use diff::{grad_params, jacobian, jvp1, DualValue};
pub use eval::CompiledExpr;
pub use transpose::{linear_args, linearity, transpose1, transpose_linear, Linearity};

static STRICT: AtomicBool = AtomicBool::new(true);

/// Strict mode raises [`Error::DomainError`] for sqrt of a negative number,
/// division by zero and similar. Otherwise such values poison to NaN/inf.
pub fn set_strict(strict: bool) {
    STRICT.store(strict, Ordering::Relaxed);
}

thread_local! {
    static STRICT_OVERRIDE: std::cell::Cell<Option<bool>> = const { std::cell::Cell::new(None) };
}

pub fn is_strict() -> bool {
    STRICT_OVERRIDE.with(|o| o.get()).unwrap_or_else(|| STRICT.load(Ordering::Relaxed))
}

/// Run `f` with strict mode overridden on the current thread only.
pub fn with_strict<T>(strict: bool, f: impl FnOnce() -> T) -> T {
    let prev = STRICT_OVERRIDE.with(|o| o.replace(Some(strict)));
    let out = f();
    STRICT_OVERRIDE.with(|o| o.set(prev));
    out
}

/// Arguments are tracked in a 64-bit mask.
pub const MAX_ARGS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Sqrt,
    Abs,
    Sign,
    /// Sum of all elements.
    Sum,
    /// Contract the last `k` axes of the first operand with the first `k` of the second.
    TensorDot(usize),
    PermuteAxes(Vec<usize>),
    /// `R ++ B ++ B -> R`.
    Trace(TensorShape),
    /// Select one element by row-major index.
    Index(usize),
    /// `m` operands of shape `R` into `R ++ tail`.
    StackLast(TensorShape),
    /// Inverse of `StackLast` for one operand.
    SliceLast(TensorShape, usize),
    /// Scalar filled into the given shape.
    Broadcast(TensorShape),
    Reshape(TensorShape),
}

impl Prim {
    pub fn name(&self) -> &'static str {
        match self {
            Prim::Add => "add",
            Prim::Sub => "sub",
            Prim::Mul => "mul",
            Prim::Div => "div",
            Prim::Pow => "pow",
            Prim::Neg => "neg",
            Prim::Sin => "sin",
            Prim::Cos => "cos",
            Prim::Exp => "exp",
            Prim::Log => "log",
            Prim::Tanh => "tanh",
            Prim::Sqrt => "sqrt",
            Prim::Abs => "abs",
            Prim::Sign => "sign",
            Prim::Sum => "sum",
            Prim::TensorDot(_) => "dot",
            Prim::PermuteAxes(_) => "permute_axes",
            Prim::Trace(_) => "trace",
            Prim::Index(_) => "index",
            Prim::StackLast(_) => "stack",
            Prim::SliceLast(..) => "slice",
            Prim::Broadcast(_) => "broadcast",
            Prim::Reshape(_) => "reshape",
        }
    }

    fn is_elementwise_binary(&self) -> bool {
        matches!(self, Prim::Add | Prim::Sub | Prim::Mul | Prim::Div | Prim::Pow)
    }

    fn is_unary(&self) -> bool {
        matches!(
            self,
            Prim::Neg
                | Prim::Sin
                | Prim::Cos
                | Prim::Exp
                | Prim::Log
                | Prim::Tanh
                | Prim::Sqrt
                | Prim::Abs
                | Prim::Sign
        )
    }

    fn hash_into(&self, h: &mut Xxh3) {
        h.update(self.name().as_bytes());
        let shape = |h: &mut Xxh3, s: &TensorShape| {
            for d in s.dims() {
                h.update(&(*d as u64).to_le_bytes());
            }
            h.update(b";");
        };
        match self {
            Prim::TensorDot(k) | Prim::Index(k) => h.update(&(*k as u64).to_le_bytes()),
            Prim::PermuteAxes(p) => {
                for i in p {
                    h.update(&(*i as u64).to_le_bytes());
                }
            }
            Prim::Trace(s) | Prim::StackLast(s) | Prim::Broadcast(s) | Prim::Reshape(s) => shape(h, s),
            Prim::SliceLast(s, j) => {
                shape(h, s);
                h.update(&(*j as u64).to_le_bytes());
            }
            _ => {}
        }
    }
}

#[derive(Clone, Debug)]
pub enum Kind {
    Const(Tensor),
    Arg(usize),
    /// An external parameter tensor supplied at evaluation time.
    Param(usize),
    Apply(Prim, Vec<Expr>),
}

pub(crate) struct Node {
    kind: Kind,
    shape: TensorShape,
    hash: u128,
    arg_mask: u64,
    has_params: bool,
}

#[derive(Clone)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn make(kind: Kind, shape: TensorShape) -> Expr {
        let mut h = Xxh3::new();
        let (arg_mask, has_params) = match &kind {
            Kind::Const(t) => {
                h.update(b"c");
                let mut bytes = Vec::new();
                t.write_bytes(&mut bytes);
                h.update(&bytes);
                (0, false)
            }
            Kind::Arg(i) => {
                h.update(b"a");
                h.update(&(*i as u64).to_le_bytes());
                (1u64 << i, false)
            }
            Kind::Param(i) => {
                h.update(b"p");
                h.update(&(*i as u64).to_le_bytes());
                (0, true)
            }
            Kind::Apply(p, ops) => {
                h.update(b"f");
                p.hash_into(&mut h);
                let mut mask = 0;
                let mut params = false;
                for o in ops {
                    h.update(&o.0.hash.to_le_bytes());
                    mask |= o.0.arg_mask;
                    params |= o.0.has_params;
                }
                (mask, params)
            }
        };
        for d in shape.dims() {
            h.update(&(*d as u64).to_le_bytes());
        }
        Expr(Arc::new(Node { kind, shape, hash: h.digest128(), arg_mask, has_params }))
    }

    pub fn constant(t: Tensor) -> Expr {
        let shape = t.shape().clone();
        Expr::make(Kind::Const(t), shape)
    }

    pub fn scalar(v: f64) -> Expr {
        Expr::constant(Tensor::scalar(v))
    }

    pub fn zeros(shape: TensorShape) -> Expr {
        Expr::constant(Tensor::zeros(shape))
    }

    pub fn arg(index: usize, shape: TensorShape) -> Result<Expr> {
        if index >= MAX_ARGS {
            return Err(Error::IndexOutOfRange { index, len: MAX_ARGS });
        }
        Ok(Expr::make(Kind::Arg(index), shape))
    }

    pub fn param(index: usize, shape: TensorShape) -> Expr {
        Expr::make(Kind::Param(index), shape)
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn shape(&self) -> &TensorShape {
        &self.0.shape
    }

    /// Structural content hash.
    pub fn content_hash(&self) -> u128 {
        self.0.hash
    }

    /// Bit `i` is set when the expression references argument `i`.
    pub fn arg_mask(&self) -> u64 {
        self.0.arg_mask
    }

    pub fn has_params(&self) -> bool {
        self.0.has_params
    }

    pub(crate) fn ptr(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    pub fn as_const(&self) -> Option<&Tensor> {
        match &self.0.kind {
            Kind::Const(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const().is_some_and(Tensor::is_zero)
    }

    fn is_scalar_one(&self) -> bool {
        self.as_const().is_some_and(|t| t.shape().is_scalar() && t.item() == 1.0)
    }

    pub fn operands(&self) -> &[Expr] {
        match &self.0.kind {
            Kind::Apply(_, ops) => ops,
            _ => &[],
        }
    }

    /// Apply a primitive, inferring the result shape and folding trivial
    /// cases (zeros, multiplicative ones, all-constant operands).
    pub fn apply(prim: Prim, operands: Vec<Expr>) -> Result<Expr> {
        let shape = infer_shape(&prim, &operands)?;
        if let Some(e) = simplify(&prim, &operands, &shape) {
            return Ok(e);
        }
        if operands.iter().all(|o| o.as_const().is_some()) {
            let vals: Vec<&Tensor> = operands.iter().map(|o| o.as_const().unwrap()).collect();
            if let Ok(t) = eval::apply_prim(&prim, &vals, &shape, false) {
                if t.data().iter().all(|v| v.is_finite()) {
                    return Ok(Expr::constant(t));
                }
            }
        }
        Ok(Expr::make(Kind::Apply(prim, operands), shape))
    }

    fn unary(&self, prim: Prim) -> Expr {
        Expr::apply(prim, vec![self.clone()]).expect("unary primitives accept any shape")
    }

    pub fn add(&self, o: &Expr) -> Result<Expr> {
        Expr::apply(Prim::Add, vec![self.clone(), o.clone()])
    }
    pub fn sub(&self, o: &Expr) -> Result<Expr> {
        Expr::apply(Prim::Sub, vec![self.clone(), o.clone()])
    }
    pub fn mul(&self, o: &Expr) -> Result<Expr> {
        Expr::apply(Prim::Mul, vec![self.clone(), o.clone()])
    }
    pub fn div(&self, o: &Expr) -> Result<Expr> {
        Expr::apply(Prim::Div, vec![self.clone(), o.clone()])
    }
    pub fn pow(&self, o: &Expr) -> Result<Expr> {
        Expr::apply(Prim::Pow, vec![self.clone(), o.clone()])
    }
    pub fn powf(&self, p: f64) -> Expr {
        self.pow(&Expr::scalar(p)).expect("scalar exponent broadcasts")
    }
    pub fn scale(&self, c: f64) -> Expr {
        self.mul(&Expr::scalar(c)).expect("scalar broadcasts")
    }
    pub fn add_scalar(&self, c: f64) -> Expr {
        self.add(&Expr::scalar(c)).expect("scalar broadcasts")
    }
    pub fn neg(&self) -> Expr {
        self.unary(Prim::Neg)
    }
    pub fn sin(&self) -> Expr {
        self.unary(Prim::Sin)
    }
    pub fn cos(&self) -> Expr {
        self.unary(Prim::Cos)
    }
    pub fn exp(&self) -> Expr {
        self.unary(Prim::Exp)
    }
    pub fn ln(&self) -> Expr {
        self.unary(Prim::Log)
    }
    pub fn tanh(&self) -> Expr {
        self.unary(Prim::Tanh)
    }
    pub fn sqrt(&self) -> Expr {
        self.unary(Prim::Sqrt)
    }
    pub fn abs(&self) -> Expr {
        self.unary(Prim::Abs)
    }
    pub fn sign(&self) -> Expr {
        self.unary(Prim::Sign)
    }
    /// `1 / (1 + exp(-x))`.
    pub fn sigmoid(&self) -> Expr {
        Expr::scalar(1.0).div(&self.neg().exp().add_scalar(1.0)).expect("scalar broadcasts")
    }
    pub fn sum(&self) -> Expr {
        Expr::apply(Prim::Sum, vec![self.clone()]).expect("sum accepts any shape")
    }
    /// Contract the last axis of `self` with the first axis of `o`.
    pub fn dot(&self, o: &Expr) -> Result<Expr> {
        self.tensordot(o, 1)
    }
    pub fn tensordot(&self, o: &Expr, k: usize) -> Result<Expr> {
        Expr::apply(Prim::TensorDot(k), vec![self.clone(), o.clone()])
    }
    pub fn outer(&self, o: &Expr) -> Expr {
        self.tensordot(o, 0).expect("outer product is always defined")
    }
    pub fn permute_axes(&self, perm: Vec<usize>) -> Result<Expr> {
        Expr::apply(Prim::PermuteAxes(perm), vec![self.clone()])
    }
    pub fn trace_block(&self, block: TensorShape) -> Result<Expr> {
        Expr::apply(Prim::Trace(block), vec![self.clone()])
    }
    /// Matrix trace of a square rank-2 expression.
    pub fn trace(&self) -> Result<Expr> {
        match self.shape().dims() {
            [n, m] if n == m => self.trace_block(TensorShape::vector(*n)),
            _ => Err(Error::ShapeMismatch(format!("trace needs a square matrix, got {}", self.shape()))),
        }
    }
    pub fn index(&self, flat: usize) -> Result<Expr> {
        Expr::apply(Prim::Index(flat), vec![self.clone()])
    }
    pub fn broadcast_to(&self, shape: TensorShape) -> Result<Expr> {
        Expr::apply(Prim::Broadcast(shape), vec![self.clone()])
    }
    pub fn reshape(&self, shape: TensorShape) -> Result<Expr> {
        Expr::apply(Prim::Reshape(shape), vec![self.clone()])
    }
    pub fn stack_last(parts: Vec<Expr>, tail: TensorShape) -> Result<Expr> {
        Expr::apply(Prim::StackLast(tail), parts)
    }
    pub fn slice_last(&self, tail: TensorShape, j: usize) -> Result<Expr> {
        Expr::apply(Prim::SliceLast(tail, j), vec![self.clone()])
    }
    pub fn vector(parts: Vec<Expr>) -> Result<Expr> {
        let n = parts.len();
        Expr::stack_last(parts, TensorShape::vector(n))
    }

    /// Determinant of a square matrix up to 3x3, expanded in closed form
    /// from its elements.
    pub fn det(&self) -> Result<Expr> {
        let n = match self.shape().dims() {
            [n, m] if n == m && *n <= 3 => *n,
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "det supports square matrices up to 3x3, got {}",
                    self.shape()
                )))
            }
        };
        let a = |i: usize, j: usize| self.index(i * n + j);
        match n {
            0 => Ok(Expr::scalar(1.0)),
            1 => a(0, 0),
            2 => a(0, 0)?.mul(&a(1, 1)?)?.sub(&a(0, 1)?.mul(&a(1, 0)?)?),
            _ => {
                let minor = |r0: usize, r1: usize, c0: usize, c1: usize| -> Result<Expr> {
                    a(r0, c0)?.mul(&a(r1, c1)?)?.sub(&a(r0, c1)?.mul(&a(r1, c0)?)?)
                };
                let t0 = a(0, 0)?.mul(&minor(1, 2, 1, 2)?)?;
                let t1 = a(0, 1)?.mul(&minor(1, 2, 0, 2)?)?;
                let t2 = a(0, 2)?.mul(&minor(1, 2, 0, 1)?)?;
                t0.sub(&t1)?.add(&t2)
            }
        }
    }

    /// Nodes reachable from `roots`, operands before users.
    pub(crate) fn topo(roots: &[Expr]) -> Vec<Expr> {
        let mut seen = std::collections::HashSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Expr, bool)> = roots.iter().rev().map(|r| (r.clone(), false)).collect();
        while let Some((e, expanded)) = stack.pop() {
            if expanded {
                order.push(e);
                continue;
            }
            if !seen.insert(e.ptr()) {
                continue;
            }
            stack.push((e.clone(), true));
            for o in e.operands().iter().rev() {
                if !seen.contains(&o.ptr()) {
                    stack.push((o.clone(), false));
                }
            }
        }
        order
    }

    /// Distinct nodes, operands before users.
    pub fn nodes(&self) -> Vec<Expr> {
        Expr::topo(std::slice::from_ref(self))
    }

    pub fn node_count(&self) -> usize {
        Expr::topo(std::slice::from_ref(self)).len()
    }

    /// Replace argument and parameter leaves. Only subgraphs that reference
    /// a replaced leaf are rebuilt; everything else is shared.
    pub fn substitute(
        roots: &[Expr],
        arg: &dyn Fn(usize) -> Option<Expr>,
        arg_mask: u64,
        param: Option<&dyn Fn(usize) -> Option<Expr>>,
    ) -> Result<Vec<Expr>> {
        let touched = |e: &Expr| e.arg_mask() & arg_mask != 0 || (param.is_some() && e.has_params());
        let mut map: std::collections::HashMap<usize, Expr> = std::collections::HashMap::new();
        for e in Expr::topo(roots) {
            if !touched(&e) {
                continue;
            }
            let new = match e.kind() {
                Kind::Arg(i) => arg(*i).unwrap_or_else(|| e.clone()),
                Kind::Param(i) => param.and_then(|p| p(*i)).unwrap_or_else(|| e.clone()),
                Kind::Const(_) => e.clone(),
                Kind::Apply(p, ops) => {
                    let ops = ops.iter().map(|o| map.get(&o.ptr()).cloned().unwrap_or_else(|| o.clone())).collect();
                    Expr::apply(p.clone(), ops)?
                }
            };
            map.insert(e.ptr(), new);
        }
        Ok(roots.iter().map(|r| map.get(&r.ptr()).cloned().unwrap_or_else(|| r.clone())).collect())
    }

    pub fn substitute_args(&self, arg: &dyn Fn(usize) -> Option<Expr>, mask: u64) -> Result<Expr> {
        Ok(Expr::substitute(std::slice::from_ref(self), arg, mask, None)?.remove(0))
    }

    /// Renumber argument `i` to `f(i)`.
    pub fn remap_args(&self, f: &dyn Fn(usize) -> usize) -> Result<Expr> {
        let shapes = self.arg_shapes();
        self.substitute_args(
            &|i| {
                let j = f(i);
                (j != i).then(|| Expr::arg(j, shapes[&i].clone()).expect("index checked"))
            },
            u64::MAX,
        )
    }

    /// Turn parameter `k` into argument `offset + k`.
    pub fn params_to_args(&self, offset: usize) -> Result<Expr> {
        let shapes = self.param_shapes();
        let p = |k: usize| Expr::arg(offset + k, shapes[&k].clone()).ok();
        Ok(Expr::substitute(std::slice::from_ref(self), &|_| None, 0, Some(&p))?.remove(0))
    }

    pub(crate) fn arg_shapes(&self) -> std::collections::HashMap<usize, TensorShape> {
        Expr::topo(std::slice::from_ref(self))
            .into_iter()
            .filter_map(|e| match e.kind() {
                Kind::Arg(i) => Some((*i, e.shape().clone())),
                _ => None,
            })
            .collect()
    }

    pub(crate) fn param_shapes(&self) -> std::collections::HashMap<usize, TensorShape> {
        Expr::topo(std::slice::from_ref(self))
            .into_iter()
            .filter_map(|e| match e.kind() {
                Kind::Param(i) => Some((*i, e.shape().clone())),
                _ => None,
            })
            .collect()
    }

    pub fn eval(&self, args: &[Tensor]) -> Result<Tensor> {
        CompiledExpr::new(std::slice::from_ref(self)).eval(args, &[]).map(|mut v| v.remove(0))
    }

    pub fn eval_with_params(&self, args: &[Tensor], params: &[Tensor]) -> Result<Tensor> {
        CompiledExpr::new(std::slice::from_ref(self)).eval(args, params).map(|mut v| v.remove(0))
    }

    /// Symbolic forward mode: the directional derivative along `tangents`
    /// (one optional tangent expression per argument; `None` is zero).
    /// Returns `None` when the derivative is identically zero.
    pub fn jvp(&self, tangents: &[Option<Expr>]) -> Result<Option<Expr>> {
        diff::jvp_expr(self, tangents)
    }

    /// One node per line, operands referenced by index.
    pub fn pretty(&self) -> String {
        print::pretty(self)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", print::inline(self))
    }
}

fn infer_shape(prim: &Prim, ops: &[Expr]) -> Result<TensorShape> {
    let arity = |n: usize| {
        if ops.len() != n {
            Err(Error::ArityMismatch { expected: n, actual: ops.len() })
        } else {
            Ok(())
        }
    };
    if prim.is_elementwise_binary() {
        arity(2)?;
        return tensor::broadcast_shape(ops[0].shape(), ops[1].shape());
    }
    if prim.is_unary() {
        arity(1)?;
        return Ok(ops[0].shape().clone());
    }
    match prim {
        Prim::Sum => {
            arity(1)?;
            Ok(TensorShape::scalar())
        }
        Prim::TensorDot(k) => {
            arity(2)?;
            tensor::tensordot_shape(ops[0].shape(), ops[1].shape(), *k)
        }
        Prim::PermuteAxes(perm) => {
            arity(1)?;
            let r = ops[0].shape().rank();
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..r).collect::<Vec<_>>() {
                return Err(Error::InvalidPermutation(perm.clone()));
            }
            Ok(tensor::permute_shape(ops[0].shape(), perm))
        }
        Prim::Trace(block) => {
            arity(1)?;
            let s = ops[0].shape();
            let b = block.rank();
            if s.rank() < 2 * b {
                return Err(Error::ShapeMismatch(format!("cannot trace {block} pairs out of {s}")));
            }
            let (r, tail) = s.split_at(s.rank() - 2 * b);
            if tail != block.concat(block) {
                return Err(Error::ShapeMismatch(format!("cannot trace {block} pairs out of {s}")));
            }
            Ok(r)
        }
        Prim::Index(flat) => {
            arity(1)?;
            let n = ops[0].shape().numel();
            if *flat >= n {
                return Err(Error::IndexOutOfRange { index: *flat, len: n });
            }
            Ok(TensorShape::scalar())
        }
        Prim::StackLast(tail) => {
            if ops.len() != tail.numel() || ops.is_empty() {
                return Err(Error::ArityMismatch { expected: tail.numel(), actual: ops.len() });
            }
            let r = ops[0].shape();
            if let Some(bad) = ops.iter().find(|o| o.shape() != r) {
                return Err(Error::ShapeMismatch(format!("cannot stack {} with {r}", bad.shape())));
            }
            Ok(r.concat(tail))
        }
        Prim::SliceLast(tail, j) => {
            arity(1)?;
            let s = ops[0].shape();
            if s.rank() < tail.rank() || s.dims()[s.rank() - tail.rank()..] != *tail.dims() {
                return Err(Error::ShapeMismatch(format!("{s} does not end with {tail}")));
            }
            if *j >= tail.numel() {
                return Err(Error::IndexOutOfRange { index: *j, len: tail.numel() });
            }
            Ok(s.split_at(s.rank() - tail.rank()).0)
        }
        Prim::Broadcast(shape) => {
            arity(1)?;
            if !ops[0].shape().is_scalar() {
                return Err(Error::ShapeMismatch(format!("broadcast needs a scalar, got {}", ops[0].shape())));
            }
            Ok(shape.clone())
        }
        Prim::Reshape(shape) => {
            arity(1)?;
            if shape.numel() != ops[0].shape().numel() {
                return Err(Error::ShapeMismatch(format!("cannot reshape {} to {shape}", ops[0].shape())));
            }
            Ok(shape.clone())
        }
        _ => unreachable!("covered above"),
    }
}

fn simplify(prim: &Prim, ops: &[Expr], shape: &TensorShape) -> Option<Expr> {
    let zeros = || Some(Expr::zeros(shape.clone()));
    let same = |e: &Expr| e.shape() == shape;
    match prim {
        Prim::Add => {
            if ops[0].is_zero() && same(&ops[1]) {
                return Some(ops[1].clone());
            }
            if ops[1].is_zero() && same(&ops[0]) {
                return Some(ops[0].clone());
            }
        }
        Prim::Sub => {
            if ops[1].is_zero() && same(&ops[0]) {
                return Some(ops[0].clone());
            }
            if ops[0].is_zero() && same(&ops[1]) {
                return Some(ops[1].neg());
            }
        }
        Prim::Mul => {
            if ops[0].is_zero() || ops[1].is_zero() {
                return zeros();
            }
            if ops[0].is_scalar_one() && same(&ops[1]) {
                return Some(ops[1].clone());
            }
            if ops[1].is_scalar_one() && same(&ops[0]) {
                return Some(ops[0].clone());
            }
        }
        Prim::Div => {
            if ops[0].is_zero() && !ops[1].is_zero() {
                return zeros();
            }
            if ops[1].is_scalar_one() && same(&ops[0]) {
                return Some(ops[0].clone());
            }
        }
        Prim::Neg => {
            if let Kind::Apply(Prim::Neg, inner) = ops[0].kind() {
                return Some(inner[0].clone());
            }
            if ops[0].is_zero() {
                return zeros();
            }
        }
        Prim::TensorDot(_) => {
            if ops[0].is_zero() || ops[1].is_zero() {
                return zeros();
            }
        }
        Prim::Sum
        | Prim::PermuteAxes(_)
        | Prim::Trace(_)
        | Prim::Index(_)
        | Prim::SliceLast(..)
        | Prim::Broadcast(_)
        | Prim::Reshape(_) => {
            if ops[0].is_zero() {
                return zeros();
            }
            if let (Prim::Reshape(_), true) = (prim, same(&ops[0])) {
                return Some(ops[0].clone());
            }
        }
        Prim::StackLast(_) if ops.iter().all(Expr::is_zero) => {
            return zeros();
        }
        _ => {}
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::arg(0, TensorShape::scalar()).unwrap()
    }

    #[test]
    fn eval_basic() {
        let at = |e: &Expr, v: f64| e.eval(&[Tensor::scalar(v)]).unwrap().item();
        assert_eq!(at(&x().sin(), 0.0), 0.0);
        let e = x().powf(2.0).add_scalar(1.0).sqrt();
        assert_eq!(at(&e, 0.0), 1.0);
        assert!((at(&x().tanh(), 1.0) - 1f64.tanh()).abs() < 1e-15);
        assert!((at(&x().tanh(), 1.0) - 0.761_594_155_955_764_9).abs() < 1e-15);
    }

    #[test]
    fn zeros_fold_away() {
        let z = Expr::zeros(TensorShape::scalar());
        assert!(x().mul(&z).unwrap().is_zero());
        assert_eq!(x().add(&z).unwrap().content_hash(), x().content_hash());
        assert!(Expr::scalar(2.0).add(&Expr::scalar(3.0)).unwrap().as_const().is_some());
    }

    #[test]
    fn hashes_are_structural() {
        let a = x().sin().add(&x()).unwrap();
        let b = x().sin().add(&x()).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), x().cos().add(&x()).unwrap().content_hash());
    }

    #[test]
    fn shape_errors() {
        let v3 = Expr::arg(0, TensorShape::vector(3)).unwrap();
        let v2 = Expr::arg(1, TensorShape::vector(2)).unwrap();
        assert!(matches!(v3.add(&v2), Err(Error::ShapeMismatch(_))));
        assert!(v3.dot(&v2).is_err());
        assert!(v3.index(3).is_err());
    }

    #[test]
    fn det_closed_form() {
        let m = Tensor::new(TensorShape::new(&[3, 3]), vec![2., 0., 1., 1., 3., 2., 1., 1., 2.]).unwrap();
        let d = Expr::constant(m).det().unwrap();
        assert!((d.as_const().unwrap().item() - 6.0).abs() < 1e-14);
        let m2 = Expr::arg(0, TensorShape::new(&[2, 2])).unwrap().det().unwrap();
        let v = m2.eval(&[Tensor::new(TensorShape::new(&[2, 2]), vec![1., 2., 3., 4.]).unwrap()]).unwrap();
        assert_eq!(v.item(), -2.0);
    }

    #[test]
    fn substitution_shares_untouched_nodes() {
        let y = Expr::arg(1, TensorShape::scalar()).unwrap();
        let heavy = y.sin().exp();
        let e = x().mul(&heavy).unwrap();
        let s = e.substitute_args(&|i| (i == 0).then(|| Expr::scalar(2.0)), 1).unwrap();
        assert_eq!(s.operands()[1].ptr(), heavy.ptr());
    }
}
