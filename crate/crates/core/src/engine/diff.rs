// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use super::eval::{apply_prim, CompiledExpr, Instr};
use super::{is_strict, transpose, Expr, Kind, Prim, MAX_ARGS};
use crate::error::{Error, Result};
use crate::signature::TensorShape;
use crate::tensor::{self, Tensor};

/// Broadcast a scalar-shaped tangent up to the result shape.
fn fit(t: Expr, shape: &TensorShape) -> Result<Expr> {
    if t.shape() == shape {
        Ok(t)
    } else {
        t.broadcast_to(shape.clone())
    }
}

fn add_opt(a: Option<Expr>, b: Option<Expr>) -> Result<Option<Expr>> {
    Ok(match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(a.add(&b)?),
    })
}

fn tangent_rule(e: &Expr, p: &Prim, ops: &[Expr], t: &[Option<Expr>]) -> Result<Option<Expr>> {
    let shape = e.shape();
    let (a, ta) = (&ops[0], t[0].clone());
    let out = match p {
        Prim::Add => add_opt(ta, t[1].clone())?,
        Prim::Sub => add_opt(ta, t[1].as_ref().map(Expr::neg))?,
        Prim::Mul => {
            let l = ta.map(|ta| ta.mul(&ops[1])).transpose()?;
            let r = t[1].as_ref().map(|tb| a.mul(tb)).transpose()?;
            add_opt(l, r)?
        }
        Prim::Div => {
            let b = &ops[1];
            let l = ta.map(|ta| ta.div(b)).transpose()?;
            let r = t[1].as_ref().map(|tb| e.mul(tb)?.div(b)).transpose()?.map(|x| x.neg());
            add_opt(l, r)?
        }
        Prim::Pow => {
            let b = &ops[1];
            let l = ta.map(|ta| b.mul(&a.pow(&b.add_scalar(-1.0))?)?.mul(&ta)).transpose()?;
            let r = t[1].as_ref().map(|tb| e.mul(&a.ln())?.mul(tb)).transpose()?;
            add_opt(l, r)?
        }
        Prim::Neg => ta.map(|x| x.neg()),
        Prim::Sin => ta.map(|x| a.cos().mul(&x)).transpose()?,
        Prim::Cos => ta.map(|x| a.sin().neg().mul(&x)).transpose()?,
        Prim::Exp => ta.map(|x| e.mul(&x)).transpose()?,
        Prim::Log => ta.map(|x| x.div(a)).transpose()?,
        Prim::Tanh => ta.map(|x| Expr::scalar(1.0).sub(&e.mul(e)?)?.mul(&x)).transpose()?,
        Prim::Sqrt => ta.map(|x| x.scale(0.5).div(e)).transpose()?,
        Prim::Abs => ta.map(|x| a.sign().mul(&x)).transpose()?,
        Prim::Sign => None,
        Prim::TensorDot(k) => {
            let l = ta.map(|ta| ta.tensordot(&ops[1], *k)).transpose()?;
            let r = t[1].as_ref().map(|tb| a.tensordot(tb, *k)).transpose()?;
            add_opt(l, r)?
        }
        Prim::StackLast(tail) => {
            if t.iter().all(Option::is_none) {
                None
            } else {
                let parts = t
                    .iter()
                    .zip(ops)
                    .map(|(ti, o)| ti.clone().unwrap_or_else(|| Expr::zeros(o.shape().clone())))
                    .collect();
                Some(Expr::stack_last(parts, tail.clone())?)
            }
        }
        Prim::Sum
        | Prim::PermuteAxes(_)
        | Prim::Trace(_)
        | Prim::Index(_)
        | Prim::SliceLast(..)
        | Prim::Broadcast(_)
        | Prim::Reshape(_) => ta.map(|x| Expr::apply(p.clone(), vec![x])).transpose()?,
    };
    out.filter(|x| !x.is_zero()).map(|x| fit(x, shape)).transpose()
}

/// Symbolic JVP of several roots at once, sharing the tangent graph.
pub(crate) fn jvp_many(roots: &[Expr], tangents: &[Option<Expr>]) -> Result<Vec<Option<Expr>>> {
    let mut mask = 0u64;
    for (i, t) in tangents.iter().enumerate().take(MAX_ARGS) {
        if t.as_ref().is_some_and(|t| !t.is_zero()) {
            mask |= 1 << i;
        }
    }
    let mut map: HashMap<usize, Option<Expr>> = HashMap::new();
    for e in Expr::topo(roots) {
        if e.arg_mask() & mask == 0 {
            continue;
        }
        let t = match e.kind() {
            Kind::Arg(i) => {
                let t = tangents[*i].clone().expect("masked tangent present");
                if t.shape() != e.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "tangent for argument {i} is {}, argument is {}",
                        t.shape(),
                        e.shape()
                    )));
                }
                Some(t)
            }
            Kind::Const(_) | Kind::Param(_) => None,
            Kind::Apply(p, ops) => {
                let ts: Vec<Option<Expr>> = ops.iter().map(|o| map.get(&o.ptr()).cloned().flatten()).collect();
                tangent_rule(&e, p, ops, &ts)?
            }
        };
        map.insert(e.ptr(), t);
    }
    Ok(roots.iter().map(|r| map.get(&r.ptr()).cloned().flatten()).collect())
}

pub(crate) fn jvp_expr(e: &Expr, tangents: &[Option<Expr>]) -> Result<Option<Expr>> {
    Ok(jvp_many(std::slice::from_ref(e), tangents)?.remove(0))
}

/// Derivative of `e` with respect to argument `argnum` (of shape
/// `arg_shape`), shaped `e.shape ++ arg_shape`.
pub fn jacobian(e: &Expr, argnum: usize, arg_shape: &TensorShape) -> Result<Expr> {
    let n = argnum + 1;
    let column = |dir: Tensor| -> Result<Expr> {
        let mut ts = vec![None; n];
        ts[argnum] = Some(Expr::constant(dir));
        Ok(jvp_expr(e, &ts)?.unwrap_or_else(|| Expr::zeros(e.shape().clone())))
    };
    if arg_shape.is_scalar() {
        return column(Tensor::scalar(1.0));
    }
    let cols =
        (0..arg_shape.numel()).map(|j| column(Tensor::basis(arg_shape.clone(), j))).collect::<Result<Vec<_>>>()?;
    Expr::stack_last(cols, arg_shape.clone())
}

/// Gradients of a scalar expression with respect to each of its parameters,
/// as expressions over the same arguments and parameters.
pub fn grad_params(e: &Expr, n_args: usize, param_shapes: &[TensorShape]) -> Result<Vec<Expr>> {
    if !e.shape().is_scalar() {
        return Err(Error::ShapeMismatch(format!("gradient needs a scalar, got {}", e.shape())));
    }
    let np = param_shapes.len();
    if n_args + 2 * np > MAX_ARGS {
        return Err(Error::Unsupported(format!("{n_args} arguments and {np} parameters exceed the argument limit")));
    }
    let bound = e.params_to_args(n_args)?;
    let mut tangents = vec![None; n_args + np];
    let mut s_mask = 0u64;
    for (k, s) in param_shapes.iter().enumerate() {
        tangents[n_args + k] = Some(Expr::arg(n_args + np + k, s.clone())?);
        s_mask |= 1 << (n_args + np + k);
    }
    let Some(lin) = jvp_expr(&bound, &tangents)? else {
        return Ok(param_shapes.iter().map(|s| Expr::zeros(s.clone())).collect());
    };
    let cts = transpose::transpose_linear(&lin, s_mask, &Expr::scalar(1.0))?;
    let back =
        |i: usize| (i >= n_args && i < n_args + np).then(|| Expr::param(i - n_args, param_shapes[i - n_args].clone()));
    let mut back_mask = 0u64;
    for k in 0..np {
        back_mask |= 1 << (n_args + k);
    }
    param_shapes
        .iter()
        .enumerate()
        .map(|(k, s)| match cts.get(&(n_args + np + k)) {
            Some(c) => c.substitute_args(&back, back_mask),
            None => Ok(Expr::zeros(s.clone())),
        })
        .collect()
}

/// Primal value and tangent from numeric forward-mode evaluation.
#[derive(Clone, Debug)]
pub struct DualValue {
    pub primal: Tensor,
    pub tangent: Tensor,
}

fn numeric_tangent(p: &Prim, v: &[&Tensor], out: &Tensor, t: &[Option<Tensor>]) -> Option<Tensor> {
    let mul = |a: &Tensor, b: &Tensor| tensor::zip_with(a, b, |x, y| x * y);
    let plus = |a: Option<Tensor>, b: Option<Tensor>| match (a, b) {
        (None, x) | (x, None) => x,
        (Some(a), Some(b)) => Some(tensor::zip_with(&a, &b, |x, y| x + y)),
    };
    let ta = t[0].as_ref();
    let unary = |d: &dyn Fn(f64, f64) -> f64| {
        ta.map(|ta| {
            let dv = tensor::zip_with(v[0], out, d);
            mul(&dv, ta)
        })
    };
    match p {
        Prim::Add => plus(t[0].clone(), t[1].clone()),
        Prim::Sub => plus(t[0].clone(), t[1].as_ref().map(|x| x.map(|y| -y))),
        Prim::Mul => plus(ta.map(|x| mul(x, v[1])), t[1].as_ref().map(|x| mul(v[0], x))),
        Prim::Div => plus(
            ta.map(|x| tensor::zip_with(x, v[1], |a, b| a / b)),
            t[1].as_ref().map(|x| {
                let q = tensor::zip_with(out, v[1], |a, b| -a / b);
                mul(&q, x)
            }),
        ),
        Prim::Pow => plus(
            ta.map(|x| {
                let d = tensor::zip_with(v[0], v[1], |a, b| b * a.powf(b - 1.0));
                mul(&d, x)
            }),
            t[1].as_ref().map(|x| {
                let d = tensor::zip_with(out, v[0], |o, a| o * a.ln());
                mul(&d, x)
            }),
        ),
        Prim::Neg => ta.map(|x| x.map(|y| -y)),
        Prim::Sin => unary(&|a, _| a.cos()),
        Prim::Cos => unary(&|a, _| -a.sin()),
        Prim::Exp => unary(&|_, o| o),
        Prim::Log => unary(&|a, _| 1.0 / a),
        Prim::Tanh => unary(&|_, o| 1.0 - o * o),
        Prim::Sqrt => unary(&|_, o| 0.5 / o),
        Prim::Abs => unary(&|a, _| a.signum() * f64::from(u8::from(a != 0.0))),
        Prim::Sign => None,
        Prim::TensorDot(k) => {
            plus(ta.map(|x| tensor::tensordot(x, v[1], *k)), t[1].as_ref().map(|x| tensor::tensordot(v[0], x, *k)))
        }
        Prim::StackLast(tail) => {
            if t.iter().all(Option::is_none) {
                return None;
            }
            let parts: Vec<Tensor> = t
                .iter()
                .zip(v)
                .map(|(ti, vi)| ti.clone().unwrap_or_else(|| Tensor::zeros(vi.shape().clone())))
                .collect();
            let refs: Vec<&Tensor> = parts.iter().collect();
            Some(tensor::stack_last(&refs, tail))
        }
        _ => ta.map(|x| apply_prim(p, &[x], out.shape(), false).expect("linear kernels do not fail")),
    }
}

/// Numeric forward mode: evaluate `e` and its directional derivative along
/// `tangents` together, one dual value per node.
pub fn jvp1(e: &Expr, args: &[Tensor], tangents: &[Option<Tensor>], params: &[Tensor]) -> Result<DualValue> {
    let prog = CompiledExpr::new(std::slice::from_ref(e));
    let strict = is_strict();
    let mut vals: Vec<Tensor> = Vec::with_capacity(prog.instrs.len());
    let mut tans: Vec<Option<Tensor>> = Vec::with_capacity(prog.instrs.len());
    for ins in &prog.instrs {
        let (v, t) = match ins {
            Instr::Const(c) => (c.clone(), None),
            Instr::Arg(i, _) => {
                let a = args.get(*i).ok_or(Error::IndexOutOfRange { index: *i, len: args.len() })?;
                (a.clone(), tangents.get(*i).cloned().flatten())
            }
            Instr::Param(i, _) => (params.get(*i).ok_or(Error::UnboundParameter(*i))?.clone(), None),
            Instr::Apply(p, ops, s) => {
                let operands: Vec<&Tensor> = ops.iter().map(|&o| &vals[o]).collect();
                let out = apply_prim(p, &operands, s, strict)?;
                let ts: Vec<Option<Tensor>> = ops.iter().map(|&o| tans[o].clone()).collect();
                let t = numeric_tangent(p, &operands, &out, &ts).map(|t| {
                    if t.shape() == s {
                        t
                    } else {
                        Tensor::filled(s.clone(), t.item())
                    }
                });
                (out, t)
            }
        };
        vals.push(v);
        tans.push(t);
    }
    let o = prog.outputs[0];
    let primal = vals[o].clone();
    let tangent = tans[o].clone().unwrap_or_else(|| Tensor::zeros(primal.shape().clone()));
    Ok(DualValue { primal, tangent })
}
