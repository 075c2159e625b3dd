// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::Arc;

use crate::engine::{self, Linearity};
use crate::error::{Error, Result};
use crate::operators::{
    broadcast_fn, compose, integrate_arc, inverse_permutation, linear_transpose, nabla, permute_args, Body,
    FunctionValue, VarId,
};
use crate::quadrature::Grid;
use crate::signature::TensorShape;
use crate::tensor::Tensor;

/// Where a trace record's operand comes from.
#[derive(Clone, Debug)]
pub enum Slot {
    /// An earlier record, which depends on the tangent inputs.
    Record(usize),
    /// A function that does not depend on the tangent inputs.
    Primal(FunctionValue),
}

#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub primitive: &'static str,
    pub node: FunctionValue,
    pub operands: Vec<Slot>,
    /// Static parameters, rendered.
    pub params: String,
    /// Operand positions that carry the tangent.
    pub linear_operands: Vec<usize>,
    /// Set for records that are tangent inputs.
    pub input: Option<usize>,
}

/// The linear part of an operator program, operands before users.
#[derive(Clone, Debug)]
pub struct LinearTrace {
    pub records: Vec<TraceRecord>,
    /// Index of the output record.
    pub output: usize,
    /// Grid of a terminal integral over all arguments, if any.
    pub functional_grid: Option<Arc<Grid>>,
    pub n_inputs: usize,
}

fn params_of(body: &Body) -> String {
    match body {
        Body::Nabla(_, a) | Body::LinearTranspose(_, a) => format!("argnum={a}"),
        Body::Integrate(_, a, g) => format!("argnum={a},n={}", g.len()),
        Body::PermuteArgs(_, p) => format!("perm={p:?}"),
        Body::Broadcast(_, s, p) => format!("shapes={s:?},positions={p:?}"),
        Body::Var(v) => format!("var={v}"),
        _ => String::new(),
    }
}

impl LinearTrace {
    pub(crate) fn record(
        root: &FunctionValue,
        inputs: &[VarId],
        functional_grid: Option<Arc<Grid>>,
    ) -> Result<LinearTrace> {
        let mut index: HashMap<u128, usize> = HashMap::new();
        let mut records: Vec<TraceRecord> = Vec::new();
        for n in root.topo() {
            let input = match n.body() {
                Body::Var(v) => inputs.iter().position(|i| i == v),
                _ => None,
            };
            let kids = n.body().children();
            let dependent = input.is_some() || kids.iter().any(|c| index.contains_key(&c.id()));
            if !dependent {
                continue;
            }
            let operands: Vec<Slot> = kids
                .iter()
                .map(|c| match index.get(&c.id()) {
                    Some(&r) => Slot::Record(r),
                    None => Slot::Primal((*c).clone()),
                })
                .collect();
            let linear_operands =
                operands.iter().enumerate().filter(|(_, s)| matches!(s, Slot::Record(_))).map(|(i, _)| i).collect();
            index.insert(n.id(), records.len());
            records.push(TraceRecord {
                primitive: if input.is_some() { "input" } else { n.body().primitive() },
                node: n.clone(),
                operands,
                params: params_of(n.body()),
                linear_operands,
                input,
            });
        }
        let output = *index
            .get(&root.id())
            .ok_or_else(|| Error::Unsupported("the output does not depend on the inputs".into()))?;
        Ok(LinearTrace { records, output, functional_grid, n_inputs: inputs.len() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Grids the transpose rules integrate on: `domain` for the arguments that
/// `broadcast` and `zip` insert, `tangent` for the tangent slots of
/// `linearize`. Each grid serves the arguments whose shape matches its
/// points.
#[derive(Clone, Debug, Default)]
pub struct TransposeGrids {
    pub domain: Vec<Arc<Grid>>,
    pub tangent: Vec<Arc<Grid>>,
}

impl TransposeGrids {
    pub fn with_domain(mut self, g: Grid) -> Self {
        self.domain.push(Arc::new(g));
        self
    }

    pub fn with_tangent(mut self, g: Grid) -> Self {
        self.tangent.push(Arc::new(g));
        self
    }

    fn pick(list: &[Arc<Grid>], shape: &TensorShape, what: &str) -> Result<Arc<Grid>> {
        list.iter()
            .find(|g| g.point_shape() == shape)
            .cloned()
            .ok_or_else(|| Error::GridRequired(format!("no {what} grid with {shape} points")))
    }
}

#[derive(Clone, Debug)]
pub enum Cotangent {
    Scalar(Tensor),
    Function(FunctionValue),
    /// One function per return slot of a tuple-valued output.
    Tuple(Vec<FunctionValue>),
}

impl Cotangent {
    fn add(self, other: Cotangent) -> Result<Cotangent> {
        Ok(match (self, other) {
            (Cotangent::Scalar(a), Cotangent::Scalar(b)) => {
                Cotangent::Scalar(crate::tensor::zip_with(&a, &b, |x, y| x + y))
            }
            (Cotangent::Function(a), Cotangent::Function(b)) => Cotangent::Function(a.add(&b)?),
            (Cotangent::Tuple(a), Cotangent::Tuple(b)) => {
                Cotangent::Tuple(a.iter().zip(&b).map(|(x, y)| x.add(y)).collect::<Result<_>>()?)
            }
            _ => return Err(Error::ShapeMismatch("cotangent kinds differ".into())),
        })
    }

    fn function(self, what: &str) -> Result<FunctionValue> {
        match self {
            Cotangent::Function(f) => Ok(f),
            _ => Err(Error::ShapeMismatch(format!("{what} needs a function cotangent"))),
        }
    }
}

fn integrate_out(f: &FunctionValue, positions: &[usize], grids: &[Arc<Grid>]) -> Result<FunctionValue> {
    let mut sorted = positions.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut cur = f.clone();
    for p in sorted {
        let shape = cur.signature().args()[p].clone();
        let g = TransposeGrids::pick(grids, &shape, "domain")?;
        cur = integrate_arc(&cur, p, g)?.into_function()?;
    }
    Ok(cur)
}

/// `-div_a c`: minus the trace of the derivative of `c` in argument `a`
/// over the trailing block of `a`'s shape.
fn neg_divergence(c: &FunctionValue, a: usize, ret: &TensorShape) -> Result<FunctionValue> {
    let block = c.signature().args()[a].clone();
    let d = nabla(c, a)?;
    let shape = ret.concat(&block).concat(&block);
    let tr = FunctionValue::build(vec![shape], |x| Ok(x[0].trace_block(block.clone())?.neg()))?;
    compose(&tr, &[d])
}

fn linearize_transpose(f: &FunctionValue, c: &FunctionValue, grids: &TransposeGrids) -> Result<FunctionValue> {
    let n = f.arity();
    let ret = f.signature().ret()?.clone();
    let cargs = c.signature().args().to_vec();
    let mut total: Option<FunctionValue> = None;
    for k in 0..n {
        let ak = f.signature().args()[k].clone();
        let proj = FunctionValue::projection(cargs.clone(), n + k)?;
        let outer = FunctionValue::build(vec![ret.clone(), ak.clone()], |x| Ok(x[0].outer(&x[1])))?;
        let mut m = compose(&outer, &[c.clone(), proj])?;
        for _ in 0..n {
            let shape = m.signature().args()[n].clone();
            let g = TransposeGrids::pick(&grids.tangent, &shape, "tangent")?;
            m = integrate_arc(&m, n, g)?.into_function()?;
        }
        let term = neg_divergence(&m, k, &ret)?;
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Unsupported("linearize of a function without arguments".into()))
}

fn operand_fn(slot: &Slot, records: &[TraceRecord]) -> FunctionValue {
    match slot {
        Slot::Record(r) => records[*r].node.clone(),
        Slot::Primal(f) => f.clone(),
    }
}

/// Joint linearity of `f` in the slots `d`, with the other slots fed by
/// `fed`.
fn check_compose_linear(f: &FunctionValue, d: u64, zero_fed: u64) -> Result<()> {
    let m = f.linear_mask();
    if d & !m == 0 && (m & !d) & !zero_fed == 0 {
        return Ok(());
    }
    if !f.has_vars() {
        if let Ok(es) = f.lower() {
            if es.len() == 1 && matches!(engine::linearity(&es[0], d), Linearity::Linear | Linearity::Zero) {
                return Ok(());
            }
        }
    }
    Err(Error::NotLinear(format!("{} is not linear in the tangent-carrying slots", f.signature())))
}

fn compose_transpose(
    rec: &TraceRecord,
    records: &[TraceRecord],
    c: FunctionValue,
    push: &mut dyn FnMut(usize, Cotangent) -> Result<()>,
) -> Result<()> {
    let Body::Compose(f, gs) = rec.node.body() else { unreachable!() };
    let f_dep = matches!(rec.operands[0], Slot::Record(_));
    let deps: Vec<usize> = (0..gs.len()).filter(|&i| matches!(rec.operands[i + 1], Slot::Record(_))).collect();
    if f_dep && !deps.is_empty() {
        return Err(Error::NotLinear("compose carries tangents in both the outer and an inner function".into()));
    }
    if f_dep {
        let identity = gs.len() == f.arity()
            && gs.iter().enumerate().all(|(i, g)| g.projection_index() == Some(i) && g.arity() == f.arity());
        if !identity {
            return Err(Error::UndefinedTranspose("compose in its outer function needs an identity inner".into()));
        }
        let Slot::Record(r) = rec.operands[0] else { unreachable!() };
        return push(r, Cotangent::Function(c));
    }
    if gs.iter().any(|g| g.signature().is_tuple()) {
        return Err(Error::Unsupported("transpose through compose with tuple-valued inners".into()));
    }
    let d_mask = deps.iter().fold(0u64, |m, &i| m | (1 << i));
    let zero_fed =
        (0..gs.len()).filter(|&i| operand_fn(&rec.operands[i + 1], records).is_zero()).fold(0u64, |m, i| m | (1 << i));
    check_compose_linear(f, d_mask, zero_fed)?;
    for &i in &deps {
        let t = linear_transpose(f, i)?;
        let mut inners = Vec::with_capacity(gs.len());
        for (j, g) in gs.iter().enumerate() {
            if j == i {
                continue;
            }
            let gj = operand_fn(&rec.operands[j + 1], records);
            inners.push(if d_mask & (1 << j) != 0 { FunctionValue::zeros(g.signature())? } else { gj });
        }
        inners.push(c.clone());
        let Slot::Record(r) = rec.operands[i + 1] else { unreachable!() };
        push(r, Cotangent::Function(compose(&t, &inners)?))?;
    }
    Ok(())
}

/// Walk a linear trace backwards from the output cotangent. Returns one
/// cotangent per input; `None` means zero.
pub fn op_transpose(trace: &LinearTrace, ct: Cotangent, grids: &TransposeGrids) -> Result<Vec<Option<FunctionValue>>> {
    let records = &trace.records;
    let mut cts: HashMap<usize, Cotangent> = HashMap::new();
    let seed = match (&trace.functional_grid, ct) {
        (Some(_), Cotangent::Scalar(t)) => {
            let f = &records[trace.output].node;
            let t = Tensor::filled(f.signature().ret()?.clone(), t.item());
            Cotangent::Function(FunctionValue::constant(t, f.signature().args().to_vec())?)
        }
        (Some(_), _) => return Err(Error::ShapeMismatch("a functional needs a scalar cotangent".into())),
        (None, Cotangent::Scalar(_)) => return Err(Error::IntegrationRequired),
        (None, c) => c,
    };
    cts.insert(trace.output, seed);
    let mut out: Vec<Option<FunctionValue>> = vec![None; trace.n_inputs];
    for idx in (0..records.len()).rev() {
        let Some(c) = cts.remove(&idx) else { continue };
        let rec = &records[idx];
        let mut push = |r: usize, v: Cotangent| -> Result<()> {
            let v = match cts.remove(&r) {
                Some(prev) => prev.add(v)?,
                None => v,
            };
            cts.insert(r, v);
            Ok(())
        };
        let first = || match rec.operands.first() {
            Some(Slot::Record(r)) => Some(*r),
            _ => None,
        };
        if let Some(k) = rec.input {
            let c = c.function("an input")?;
            out[k] = Some(match out[k].take() {
                Some(prev) => prev.add(&c)?,
                None => c,
            });
            continue;
        }
        match rec.node.body() {
            Body::Compose(..) => compose_transpose(rec, records, c.function("compose")?, &mut push)?,
            Body::Nabla(f, a) => {
                let r = first().expect("dependent nabla operand");
                push(r, Cotangent::Function(neg_divergence(&c.function("nabla")?, *a, f.signature().ret()?)?))?;
            }
            Body::Linearize(f) => {
                let r = first().expect("dependent linearize operand");
                push(r, Cotangent::Function(linearize_transpose(f, &c.function("linearize")?, grids)?))?;
            }
            Body::LinearTranspose(..) => {
                return Err(Error::UndefinedTranspose("linear_transpose has no transpose rule".into()))
            }
            Body::Integrate(_, a, g) => {
                let r = first().expect("dependent integrand");
                let c = c.function("integrate")?;
                push(r, Cotangent::Function(broadcast_fn(&c, &[g.point_shape().clone()], &[*a])?))?;
            }
            Body::PermuteArgs(_, p) => {
                let r = first().expect("dependent operand");
                push(r, Cotangent::Function(permute_args(&c.function("permute_args")?, &inverse_permutation(p))?))?;
            }
            Body::Broadcast(_, _, positions) => {
                let r = first().expect("dependent operand");
                push(r, Cotangent::Function(integrate_out(&c.function("broadcast")?, positions, &grids.domain)?))?;
            }
            Body::Zip(f, g) => {
                let Cotangent::Tuple(parts) = c else {
                    return Err(Error::ShapeMismatch("zip needs a tuple cotangent".into()));
                };
                let (nf, ng) = (f.arity(), g.arity());
                let (rf, rg) = (f.signature().rets().len(), g.signature().rets().len());
                if rf != 1 || rg != 1 || parts.len() != 2 {
                    return Err(Error::Unsupported("zip transpose handles single-return operands".into()));
                }
                if let Slot::Record(r) = rec.operands[0] {
                    let g_pos: Vec<usize> = (nf..nf + ng).collect();
                    push(r, Cotangent::Function(integrate_out(&parts[0], &g_pos, &grids.domain)?))?;
                }
                if let Slot::Record(r) = rec.operands[1] {
                    let f_pos: Vec<usize> = (0..nf).collect();
                    push(r, Cotangent::Function(integrate_out(&parts[1], &f_pos, &grids.domain)?))?;
                }
            }
            Body::Leaf(_) | Body::Var(_) => {
                return Err(Error::MissingRule(format!("no transpose for {}", rec.primitive)))
            }
        }
    }
    Ok(out)
}
