// SPDX-License-Identifier: Apache-2.0

//! Function values and the higher-order primitives that build them.

mod dump;
mod eval;
mod lower;
mod sugar;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use xxhash_rust::xxh3::Xxh3;

use crate::engine::{self, CompiledExpr, Expr, Linearity};
use crate::error::{Error, Result};
use crate::quadrature::Grid;
use crate::signature::{check_compose, nabla_signature, FunctionSignature, TensorShape};
use crate::tensor::Tensor;

pub use dump::graph_json;
pub use eval::EvalSession;
pub use sugar::integral_transform;

pub type VarId = u64;

static NEXT_VAR: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_var_id() -> VarId {
    NEXT_VAR.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone)]
pub enum Body {
    /// A first-order expression over the arguments.
    Leaf(Expr),
    /// A placeholder function bound during tracing.
    Var(VarId),
    Compose(FunctionValue, Vec<FunctionValue>),
    Nabla(FunctionValue, usize),
    Linearize(FunctionValue),
    LinearTranspose(FunctionValue, usize),
    Integrate(FunctionValue, usize, Arc<Grid>),
    PermuteArgs(FunctionValue, Vec<usize>),
    Zip(FunctionValue, FunctionValue),
    /// Inserted argument shapes and their positions in the result.
    Broadcast(FunctionValue, Vec<TensorShape>, Vec<usize>),
}

impl Body {
    pub fn primitive(&self) -> &'static str {
        match self {
            Body::Leaf(_) => "leaf",
            Body::Var(_) => "var",
            Body::Compose(..) => "compose",
            Body::Nabla(..) => "nabla",
            Body::Linearize(_) => "linearize",
            Body::LinearTranspose(..) => "linear_transpose",
            Body::Integrate(..) => "integrate",
            Body::PermuteArgs(..) => "permute_args",
            Body::Zip(..) => "zip",
            Body::Broadcast(..) => "broadcast",
        }
    }

    pub fn children(&self) -> Vec<&FunctionValue> {
        match self {
            Body::Leaf(_) | Body::Var(_) => Vec::new(),
            Body::Compose(f, gs) => std::iter::once(f).chain(gs.iter()).collect(),
            Body::Nabla(f, _)
            | Body::Linearize(f)
            | Body::LinearTranspose(f, _)
            | Body::Integrate(f, _, _)
            | Body::PermuteArgs(f, _)
            | Body::Broadcast(f, _, _) => vec![f],
            Body::Zip(f, g) => vec![f, g],
        }
    }
}

pub(crate) struct FnNode {
    sig: FunctionSignature,
    body: Body,
    linear: u64,
    id: u128,
    has_vars: bool,
    lowered: OnceLock<Result<Arc<Vec<Expr>>>>,
    compiled: OnceLock<Result<Arc<CompiledExpr>>>,
}

/// An immutable node of a function graph with a static signature.
#[derive(Clone)]
pub struct FunctionValue(Arc<FnNode>);

fn full_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

impl FunctionValue {
    fn make(sig: FunctionSignature, body: Body, linear: u64) -> FunctionValue {
        let mut h = Xxh3::new();
        h.update(body.primitive().as_bytes());
        h.update(sig.to_string().as_bytes());
        let mut has_vars = false;
        match &body {
            Body::Leaf(e) => h.update(&e.content_hash().to_le_bytes()),
            Body::Var(v) => {
                h.update(&v.to_le_bytes());
                has_vars = true;
            }
            _ => {}
        }
        for c in body.children() {
            h.update(&c.id().to_le_bytes());
            has_vars |= c.has_vars();
        }
        match &body {
            Body::Nabla(_, a) | Body::LinearTranspose(_, a) => h.update(&(*a as u64).to_le_bytes()),
            Body::Integrate(_, a, g) => {
                h.update(&(*a as u64).to_le_bytes());
                h.update(&g.id().to_le_bytes());
            }
            Body::PermuteArgs(_, p) => {
                for i in p {
                    h.update(&(*i as u64).to_le_bytes());
                }
            }
            Body::Broadcast(_, shapes, pos) => {
                for (s, p) in shapes.iter().zip(pos) {
                    h.update(s.to_string().as_bytes());
                    h.update(&(*p as u64).to_le_bytes());
                }
            }
            _ => {}
        }
        h.update(&linear.to_le_bytes());
        FunctionValue(Arc::new(FnNode {
            sig,
            body,
            linear,
            id: h.digest128(),
            has_vars,
            lowered: OnceLock::new(),
            compiled: OnceLock::new(),
        }))
    }

    /// A function given by an expression over arguments of the given shapes.
    pub fn leaf(expr: Expr, args: Vec<TensorShape>) -> Result<FunctionValue> {
        for e in expr.nodes() {
            if let engine::Kind::Arg(i) = e.kind() {
                match args.get(*i) {
                    Some(s) if s == e.shape() => {}
                    Some(s) => {
                        return Err(Error::ShapeMismatch(format!(
                            "argument {i} is declared {s} but used as {}",
                            e.shape()
                        )))
                    }
                    None => return Err(Error::IndexOutOfRange { index: *i, len: args.len() }),
                }
            }
        }
        let linear = engine::linear_args(&expr, args.len());
        let sig = FunctionSignature::new(expr.shape().clone(), args)?;
        Ok(FunctionValue::make(sig, Body::Leaf(expr), linear))
    }

    /// Build a leaf from a closure over argument expressions.
    pub fn build(args: Vec<TensorShape>, f: impl FnOnce(&[Expr]) -> Result<Expr>) -> Result<FunctionValue> {
        let xs = args.iter().enumerate().map(|(i, s)| Expr::arg(i, s.clone())).collect::<Result<Vec<_>>>()?;
        let e = f(&xs)?;
        FunctionValue::leaf(e, args)
    }

    /// Scalar-to-scalar function from an expression builder.
    pub fn scalar_fn(f: impl FnOnce(Expr) -> Expr) -> FunctionValue {
        FunctionValue::build(vec![TensorShape::scalar()], |x| Ok(f(x[0].clone()))).expect("scalar leaf is well formed")
    }

    pub fn constant(value: Tensor, args: Vec<TensorShape>) -> Result<FunctionValue> {
        FunctionValue::leaf(Expr::constant(value), args)
    }

    pub fn zeros(sig: &FunctionSignature) -> Result<FunctionValue> {
        FunctionValue::constant(Tensor::zeros(sig.ret()?.clone()), sig.args().to_vec())
    }

    pub fn identity(shape: TensorShape) -> FunctionValue {
        FunctionValue::projection(vec![shape], 0).expect("index 0 exists")
    }

    /// `x_0, ..., x_{n-1} -> x_index`.
    pub fn projection(args: Vec<TensorShape>, index: usize) -> Result<FunctionValue> {
        let s = args.get(index).ok_or(Error::IndexOutOfRange { index, len: args.len() })?.clone();
        FunctionValue::leaf(Expr::arg(index, s)?, args)
    }

    pub(crate) fn var(id: VarId, sig: FunctionSignature, linear: u64) -> FunctionValue {
        FunctionValue::make(sig, Body::Var(id), linear)
    }

    pub fn signature(&self) -> &FunctionSignature {
        &self.0.sig
    }

    pub fn body(&self) -> &Body {
        &self.0.body
    }

    pub fn id(&self) -> u128 {
        self.0.id
    }

    pub fn arity(&self) -> usize {
        self.0.sig.arity()
    }

    pub fn has_vars(&self) -> bool {
        self.0.has_vars
    }

    /// Bitmask of the argument slots in which the function is jointly linear.
    pub fn linear_mask(&self) -> u64 {
        self.0.linear
    }

    pub fn linear_flags(&self) -> Vec<bool> {
        (0..self.arity()).map(|i| self.0.linear & (1 << i) != 0).collect()
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.0.body, Body::Leaf(e) if e.is_zero())
    }

    /// `Some(i)` when this is the projection onto argument `i`.
    pub fn projection_index(&self) -> Option<usize> {
        match &self.0.body {
            Body::Leaf(e) => match e.kind() {
                engine::Kind::Arg(i) => Some(*i),
                _ => None,
            },
            _ => None,
        }
    }

    pub fn var_id(&self) -> Option<VarId> {
        match &self.0.body {
            Body::Var(v) => Some(*v),
            _ => None,
        }
    }

    /// Number of distinct function nodes reachable from this one.
    pub fn node_count(&self) -> usize {
        self.topo().len()
    }

    /// Distinct reachable nodes, children before parents.
    pub fn topo(&self) -> Vec<FunctionValue> {
        FunctionValue::topo_many(std::slice::from_ref(self))
    }

    pub fn topo_many(roots: &[FunctionValue]) -> Vec<FunctionValue> {
        let mut seen = std::collections::HashSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<(FunctionValue, bool)> = roots.iter().rev().map(|r| (r.clone(), false)).collect();
        while let Some((f, expanded)) = stack.pop() {
            if expanded {
                order.push(f);
                continue;
            }
            if !seen.insert(f.id()) {
                continue;
            }
            stack.push((f.clone(), true));
            for c in f.body().children().into_iter().rev() {
                if !seen.contains(&c.id()) {
                    stack.push((c.clone(), false));
                }
            }
        }
        order
    }

    /// Rebuild this node over new children (same order as [`Body::children`]).
    pub(crate) fn with_children(&self, kids: Vec<FunctionValue>) -> Result<FunctionValue> {
        let mut it = kids.into_iter();
        let mut next = || it.next().expect("child count matches");
        Ok(match &self.0.body {
            Body::Leaf(_) | Body::Var(_) => self.clone(),
            Body::Compose(_, gs) => {
                let f = next();
                let gs: Vec<FunctionValue> = gs.iter().map(|_| next()).collect();
                compose(&f, &gs)?
            }
            Body::Nabla(_, a) => nabla(&next(), *a)?,
            Body::Linearize(_) => linearize(&next())?,
            Body::LinearTranspose(_, a) => linear_transpose(&next(), *a)?,
            Body::Integrate(_, a, g) => match integrate_arc(&next(), *a, g.clone())? {
                Integrated::Function(f) => f,
                Integrated::Scalar(_) => unreachable!("integrate nodes keep at least one argument"),
            },
            Body::PermuteArgs(_, p) => permute_args(&next(), p)?,
            Body::Zip(..) => {
                let f = next();
                zip_functions(&f, &next())?
            }
            Body::Broadcast(_, s, p) => broadcast_fn(&next(), s, p)?,
        })
    }

    /// Evaluate a single-return function without a cache.
    pub fn call(&self, args: &[Tensor]) -> Result<Tensor> {
        self.call_in(args, &mut EvalSession::new())
    }

    pub fn call_in(&self, args: &[Tensor], session: &mut EvalSession) -> Result<Tensor> {
        self.signature().ret()?;
        Ok(self.eval_in(args, session)?.remove(0))
    }

    /// Scalar convenience for functions of one scalar argument.
    pub fn at(&self, x: f64) -> Result<f64> {
        Ok(self.call(&[Tensor::scalar(x)])?.item())
    }

    pub(crate) fn compiled(&self) -> Result<Arc<CompiledExpr>> {
        self.0.compiled.get_or_init(|| self.lower().map(|e| Arc::new(CompiledExpr::new(&e)))).clone()
    }
}

impl fmt::Debug for FunctionValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}<{}>#{:08x}", self.0.body.primitive(), self.0.sig, (self.0.id >> 96) as u32)
    }
}

/// A functional value: the integral of a function over all of its
/// arguments, evaluated on demand.
#[derive(Clone, Debug)]
pub struct Functional {
    pub integrand: FunctionValue,
    pub grid: Arc<Grid>,
}

impl Functional {
    pub fn value(&self) -> Result<Tensor> {
        self.value_in(&mut EvalSession::new())
    }

    pub fn value_in(&self, session: &mut EvalSession) -> Result<Tensor> {
        let terms = self
            .grid
            .points()
            .iter()
            .zip(self.grid.weights())
            .map(|(p, w)| Ok(self.integrand.call_in(std::slice::from_ref(p), session)?.map(|v| v * w)))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::quadrature::pairwise_sum(&terms))
    }

    pub fn shape(&self) -> Result<&TensorShape> {
        self.integrand.signature().ret()
    }
}

/// Result of `integrate`: a function of the remaining arguments, or a
/// functional value when none remain.
#[derive(Clone, Debug)]
pub enum Integrated {
    Function(FunctionValue),
    Scalar(Functional),
}

impl Integrated {
    pub fn into_function(self) -> Result<FunctionValue> {
        match self {
            Integrated::Function(f) => Ok(f),
            Integrated::Scalar(_) => Err(Error::Unsupported("expected a function, got a functional value".into())),
        }
    }

    pub fn into_functional(self) -> Result<Functional> {
        match self {
            Integrated::Scalar(f) => Ok(f),
            Integrated::Function(_) => Err(Error::Unsupported("expected a functional value, got a function".into())),
        }
    }
}

/// `x -> f(g_1(x), ..., g_n(x))`. Inners share their argument list; their
/// return slots feed the outer's arguments in order.
pub fn compose(f: &FunctionValue, gs: &[FunctionValue]) -> Result<FunctionValue> {
    let inner_sigs: Vec<FunctionSignature> = gs.iter().map(|g| g.signature().clone()).collect();
    let sig = check_compose(f.signature(), &inner_sigs)?;
    let outer_linear = f.linear_mask() == full_mask(f.arity());
    let m = gs[0].linear_mask();
    let linear = if outer_linear && m != 0 && gs.iter().all(|g| g.linear_mask() == m) { m } else { 0 };
    Ok(FunctionValue::make(sig, Body::Compose(f.clone(), gs.to_vec()), linear))
}

/// Derivative function with respect to argument `argnum`. The result has
/// the same arguments and returns the value shape with the dims of argument
/// `argnum` appended.
pub fn nabla(f: &FunctionValue, argnum: usize) -> Result<FunctionValue> {
    let sig = nabla_signature(f.signature(), argnum)?;
    let m = f.linear_mask();
    let linear = if m & (1 << argnum) == 0 { m } else { 0 };
    Ok(FunctionValue::make(sig, Body::Nabla(f.clone(), argnum), linear))
}

/// `x, dx -> grad f(x) dx`, with one tangent slot per argument.
pub fn linearize(f: &FunctionValue) -> Result<FunctionValue> {
    let ret = f.signature().ret()?.clone();
    let n = f.arity();
    if 2 * n > engine::MAX_ARGS {
        return Err(Error::Unsupported(format!("linearize of a {n}-argument function")));
    }
    let mut args = f.signature().args().to_vec();
    args.extend_from_slice(f.signature().args());
    let sig = FunctionSignature::new(ret, args)?;
    Ok(FunctionValue::make(sig, Body::Linearize(f.clone()), full_mask(n) << n))
}

/// Whether `f` is linear in `argnum`, either by its flags or, for graphs
/// without free variables, by analysing the lowered expression.
pub(crate) fn linear_in(f: &FunctionValue, argnum: usize) -> bool {
    if f.linear_mask() & (1 << argnum) != 0 {
        return true;
    }
    if f.has_vars() {
        return false;
    }
    match f.lower() {
        Ok(es) if es.len() == 1 => {
            matches!(engine::linearity(&es[0], 1 << argnum), Linearity::Linear | Linearity::Zero)
        }
        _ => false,
    }
}

/// Adjoint in argument `argnum`. The result takes the other arguments in
/// order, then the cotangent.
pub fn linear_transpose(f: &FunctionValue, argnum: usize) -> Result<FunctionValue> {
    let ret = f.signature().ret()?.clone();
    let args = f.signature().args();
    if argnum >= args.len() {
        return Err(Error::IndexOutOfRange { index: argnum, len: args.len() });
    }
    if !linear_in(f, argnum) {
        return Err(Error::NotLinear(format!("{} is not linear in argument {argnum}", f.signature())));
    }
    let mut new_args: Vec<TensorShape> =
        args.iter().enumerate().filter(|(i, _)| *i != argnum).map(|(_, s)| s.clone()).collect();
    new_args.push(ret);
    let n = new_args.len();
    let sig = FunctionSignature::new(args[argnum].clone(), new_args)?;
    Ok(FunctionValue::make(sig, Body::LinearTranspose(f.clone(), argnum), 1 << (n - 1)))
}

/// Integrate argument `argnum` out on `grid`.
pub fn integrate(f: &FunctionValue, argnum: usize, grid: &Grid) -> Result<Integrated> {
    integrate_arc(f, argnum, Arc::new(grid.clone()))
}

pub fn integrate_arc(f: &FunctionValue, argnum: usize, grid: Arc<Grid>) -> Result<Integrated> {
    let args = f.signature().args();
    let a = args.get(argnum).ok_or(Error::IndexOutOfRange { index: argnum, len: args.len() })?;
    if a != grid.point_shape() {
        return Err(Error::ShapeMismatch(format!(
            "grid points are {} but argument {argnum} is {a}",
            grid.point_shape()
        )));
    }
    let ret = f.signature().ret()?.clone();
    if args.len() == 1 {
        return Ok(Integrated::Scalar(Functional { integrand: f.clone(), grid }));
    }
    let rest: Vec<TensorShape> =
        args.iter().enumerate().filter(|(i, _)| *i != argnum).map(|(_, s)| s.clone()).collect();
    let m = f.linear_mask();
    let linear = if m & (1 << argnum) == 0 { (m & full_mask(argnum)) | ((m >> (argnum + 1)) << argnum) } else { 0 };
    let sig = FunctionSignature::new(ret, rest)?;
    Ok(Integrated::Function(FunctionValue::make(sig, Body::Integrate(f.clone(), argnum, grid), linear)))
}

fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::InvalidPermutation(perm.to_vec()));
    }
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::InvalidPermutation(perm.to_vec()));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `x -> f(x[perm[0]], ..., x[perm[n-1]])`: argument `i` of `f` moves to
/// position `perm[i]`.
pub fn permute_args(f: &FunctionValue, perm: &[usize]) -> Result<FunctionValue> {
    let n = f.arity();
    check_permutation(perm, n)?;
    let old = f.signature().args();
    let mut args = old.to_vec();
    let mut linear = 0u64;
    for (i, &p) in perm.iter().enumerate() {
        args[p] = old[i].clone();
        if f.linear_mask() & (1 << i) != 0 {
            linear |= 1 << p;
        }
    }
    let sig = FunctionSignature::multi(f.signature().rets().to_vec(), args)?;
    Ok(FunctionValue::make(sig, Body::PermuteArgs(f.clone(), perm.to_vec()), linear))
}

/// `x, y -> (f(x), g(y))`.
pub fn zip_functions(f: &FunctionValue, g: &FunctionValue) -> Result<FunctionValue> {
    let nf = f.arity();
    if nf + g.arity() > engine::MAX_ARGS {
        return Err(Error::Unsupported("zip exceeds the argument limit".into()));
    }
    let mut rets = f.signature().rets().to_vec();
    rets.extend_from_slice(g.signature().rets());
    let mut args = f.signature().args().to_vec();
    args.extend_from_slice(g.signature().args());
    let (mf, mg) = (f.linear_mask(), g.linear_mask());
    let linear = if mf != 0 && mg != 0 { mf | (mg << nf) } else { 0 };
    let sig = FunctionSignature::multi(rets, args)?;
    Ok(FunctionValue::make(sig, Body::Zip(f.clone(), g.clone()), linear))
}

/// Insert ignored arguments of the given shapes at `positions` of the
/// result's argument list.
pub fn broadcast_fn(f: &FunctionValue, extra: &[TensorShape], positions: &[usize]) -> Result<FunctionValue> {
    if extra.len() != positions.len() {
        return Err(Error::ArityMismatch { expected: extra.len(), actual: positions.len() });
    }
    let total = f.arity() + extra.len();
    let mut slots: Vec<Option<TensorShape>> = vec![None; total];
    for (s, &p) in extra.iter().zip(positions) {
        if p >= total {
            return Err(Error::IndexOutOfRange { index: p, len: total });
        }
        if slots[p].is_some() {
            return Err(Error::InvalidPermutation(positions.to_vec()));
        }
        slots[p] = Some(s.clone());
    }
    let mut src = f.signature().args().iter();
    let mut linear = 0u64;
    let mut k = 0;
    let args: Vec<TensorShape> = slots
        .into_iter()
        .enumerate()
        .map(|(pos, s)| {
            s.unwrap_or_else(|| {
                if f.linear_mask() & (1 << k) != 0 {
                    linear |= 1 << pos;
                }
                k += 1;
                src.next().expect("slot count matches").clone()
            })
        })
        .collect();
    let sig = FunctionSignature::multi(f.signature().rets().to_vec(), args)?;
    Ok(FunctionValue::make(sig, Body::Broadcast(f.clone(), extra.to_vec(), positions.to_vec()), linear))
}

/// Positions of `f`'s own arguments inside a broadcast result of arity
/// `total`.
pub(crate) fn kept_positions(positions: &[usize], total: usize) -> Vec<usize> {
    (0..total).filter(|p| !positions.contains(p)).collect()
}

#[cfg(test)]
mod tests;
