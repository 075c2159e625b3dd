// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;

use super::{is_strict, Expr, Kind, Prim};
use crate::error::{Error, Result};
use crate::signature::TensorShape;
use crate::tensor::{self, Tensor};

fn domain(msg: &str, strict: bool) -> Result<()> {
    if strict {
        Err(Error::DomainError(msg.to_string()))
    } else {
        Ok(())
    }
}

/// Numeric kernel for one primitive. With `strict`, out-of-domain inputs
/// are errors instead of NaN/inf.
pub(crate) fn apply_prim(prim: &Prim, v: &[&Tensor], shape: &TensorShape, strict: bool) -> Result<Tensor> {
    let t = match prim {
        Prim::Add => tensor::zip_with(v[0], v[1], |a, b| a + b),
        Prim::Sub => tensor::zip_with(v[0], v[1], |a, b| a - b),
        Prim::Mul => tensor::zip_with(v[0], v[1], |a, b| a * b),
        Prim::Div => {
            if v[1].data().contains(&0.0) {
                domain("division by zero", strict)?;
            }
            tensor::zip_with(v[0], v[1], |a, b| a / b)
        }
        Prim::Pow => {
            let out = tensor::zip_with(v[0], v[1], f64::powf);
            if out.data().iter().any(|r| !r.is_finite()) {
                let bad = v[0].data().iter().any(|&a| a <= 0.0);
                if bad {
                    domain("pow outside its real domain", strict)?;
                }
            }
            out
        }
        Prim::Neg => v[0].map(|a| -a),
        Prim::Sin => v[0].map(f64::sin),
        Prim::Cos => v[0].map(f64::cos),
        Prim::Exp => v[0].map(f64::exp),
        Prim::Log => {
            if v[0].data().iter().any(|&a| a <= 0.0) {
                domain("log of a non-positive number", strict)?;
            }
            v[0].map(f64::ln)
        }
        Prim::Tanh => v[0].map(f64::tanh),
        Prim::Sqrt => {
            if v[0].data().iter().any(|&a| a < 0.0) {
                domain("sqrt of a negative number", strict)?;
            }
            v[0].map(f64::sqrt)
        }
        Prim::Abs => v[0].map(f64::abs),
        Prim::Sign => v[0].map(|a| {
            if a > 0.0 {
                1.0
            } else if a < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Prim::Sum => tensor::sum(v[0]),
        Prim::TensorDot(k) => tensor::tensordot(v[0], v[1], *k),
        Prim::PermuteAxes(p) => tensor::permute_axes(v[0], p),
        Prim::Trace(b) => tensor::trace(v[0], b),
        Prim::Index(i) => Tensor::scalar(v[0].data()[*i]),
        Prim::StackLast(tail) => tensor::stack_last(v, tail),
        Prim::SliceLast(tail, j) => tensor::slice_last(v[0], tail, *j),
        Prim::Broadcast(s) => Tensor::filled(s.clone(), v[0].item()),
        Prim::Reshape(s) => tensor::reshape(v[0], s),
    };
    debug_assert_eq!(t.shape(), shape);
    Ok(t)
}

#[derive(Clone, Debug)]
pub(crate) enum Instr {
    Const(Tensor),
    Arg(usize, TensorShape),
    Param(usize, TensorShape),
    Apply(Prim, Vec<usize>, TensorShape),
}

/// A set of expressions flattened into a topologically ordered tape.
/// Shared subexpressions are evaluated once.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    pub(crate) instrs: Vec<Instr>,
    pub(crate) outputs: Vec<usize>,
    /// Set when every slot is rank 0 and every primitive is elementwise.
    scalar: bool,
}

fn scalar_prim(p: &Prim, v: &[f64], strict: bool) -> Result<f64> {
    Ok(match p {
        Prim::Add => v[0] + v[1],
        Prim::Sub => v[0] - v[1],
        Prim::Mul | Prim::TensorDot(_) => v[0] * v[1],
        Prim::Div => {
            if v[1] == 0.0 {
                domain("division by zero", strict)?;
            }
            v[0] / v[1]
        }
        Prim::Pow => {
            let r = v[0].powf(v[1]);
            if !r.is_finite() && v[0] <= 0.0 {
                domain("pow outside its real domain", strict)?;
            }
            r
        }
        Prim::Neg => -v[0],
        Prim::Sin => v[0].sin(),
        Prim::Cos => v[0].cos(),
        Prim::Exp => v[0].exp(),
        Prim::Log => {
            if v[0] <= 0.0 {
                domain("log of a non-positive number", strict)?;
            }
            v[0].ln()
        }
        Prim::Tanh => v[0].tanh(),
        Prim::Sqrt => {
            if v[0] < 0.0 {
                domain("sqrt of a negative number", strict)?;
            }
            v[0].sqrt()
        }
        Prim::Abs => v[0].abs(),
        Prim::Sign => {
            if v[0] > 0.0 {
                1.0
            } else if v[0] < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Prim::Sum
        | Prim::PermuteAxes(_)
        | Prim::Trace(_)
        | Prim::Index(_)
        | Prim::Broadcast(_)
        | Prim::Reshape(_)
        | Prim::SliceLast(..)
        | Prim::StackLast(_) => v[0],
    })
}

impl CompiledExpr {
    pub fn new(roots: &[Expr]) -> CompiledExpr {
        let order = Expr::topo(roots);
        let mut slot: HashMap<usize, usize> = HashMap::with_capacity(order.len());
        let mut instrs = Vec::with_capacity(order.len());
        for e in &order {
            let ins = match e.kind() {
                Kind::Const(t) => Instr::Const(t.clone()),
                Kind::Arg(i) => Instr::Arg(*i, e.shape().clone()),
                Kind::Param(i) => Instr::Param(*i, e.shape().clone()),
                Kind::Apply(p, ops) => {
                    Instr::Apply(p.clone(), ops.iter().map(|o| slot[&o.ptr()]).collect(), e.shape().clone())
                }
            };
            slot.insert(e.ptr(), instrs.len());
            instrs.push(ins);
        }
        let outputs = roots.iter().map(|r| slot[&r.ptr()]).collect();
        let scalar = order.iter().all(|e| {
            e.shape().is_scalar()
                && match e.kind() {
                    Kind::Apply(Prim::StackLast(t), ops) => ops.len() == 1 && t.numel() == 1,
                    Kind::Apply(_, ops) => ops.iter().all(|o| o.shape().is_scalar()),
                    _ => true,
                }
        });
        CompiledExpr { instrs, outputs, scalar }
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn eval(&self, args: &[Tensor], params: &[Tensor]) -> Result<Vec<Tensor>> {
        if self.scalar {
            return self.eval_scalar(args, params);
        }
        let strict = is_strict();
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.instrs.len());
        for ins in &self.instrs {
            let v = match ins {
                Instr::Const(t) => t.clone(),
                Instr::Arg(i, s) => {
                    let a = args.get(*i).ok_or(Error::IndexOutOfRange { index: *i, len: args.len() })?;
                    if a.shape() != s {
                        return Err(Error::ShapeMismatch(format!("argument {i} should be {s}, got {}", a.shape())));
                    }
                    a.clone()
                }
                Instr::Param(i, s) => {
                    let p = params.get(*i).ok_or(Error::UnboundParameter(*i))?;
                    if p.shape() != s {
                        return Err(Error::ShapeMismatch(format!("parameter {i} should be {s}, got {}", p.shape())));
                    }
                    p.clone()
                }
                Instr::Apply(p, ops, s) => {
                    let operands: smallvec::SmallVec<[&Tensor; 4]> = ops.iter().map(|&o| &vals[o]).collect();
                    apply_prim(p, &operands, s, strict)?
                }
            };
            vals.push(v);
        }
        Ok(self.outputs.iter().map(|&o| vals[o].clone()).collect())
    }

    fn eval_scalar(&self, args: &[Tensor], params: &[Tensor]) -> Result<Vec<Tensor>> {
        let strict = is_strict();
        let mut vals: Vec<f64> = Vec::with_capacity(self.instrs.len());
        for ins in &self.instrs {
            let v = match ins {
                Instr::Const(t) => t.item(),
                Instr::Arg(i, _) => {
                    let a = args.get(*i).ok_or(Error::IndexOutOfRange { index: *i, len: args.len() })?;
                    if !a.shape().is_scalar() {
                        return Err(Error::ShapeMismatch(format!("argument {i} should be f[], got {}", a.shape())));
                    }
                    a.item()
                }
                Instr::Param(i, _) => {
                    let p = params.get(*i).ok_or(Error::UnboundParameter(*i))?;
                    if !p.shape().is_scalar() {
                        return Err(Error::ShapeMismatch(format!("parameter {i} should be f[], got {}", p.shape())));
                    }
                    p.item()
                }
                Instr::Apply(p, ops, _) => {
                    let operands: smallvec::SmallVec<[f64; 4]> = ops.iter().map(|&o| vals[o]).collect();
                    scalar_prim(p, &operands, strict)?
                }
            };
            vals.push(v);
        }
        Ok(self.outputs.iter().map(|&o| Tensor::scalar(vals[o])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::with_strict;

    #[test]
    fn strict_domain_errors() {
        let x = Expr::arg(0, TensorShape::scalar()).unwrap();
        let e = x.sqrt();
        assert!(matches!(e.eval(&[Tensor::scalar(-1.0)]), Err(Error::DomainError(_))));
        let r = with_strict(false, || e.eval(&[Tensor::scalar(-1.0)]));
        assert!(r.unwrap().item().is_nan());
    }

    #[test]
    fn shared_nodes_evaluate_once() {
        let x = Expr::arg(0, TensorShape::scalar()).unwrap();
        let s = x.sin();
        let e = s.add(&s).unwrap();
        assert_eq!(CompiledExpr::new(&[e]).len(), 3);
    }
}
