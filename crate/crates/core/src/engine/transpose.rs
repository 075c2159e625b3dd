// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};

use super::{Expr, Kind, Prim};
use crate::error::{Error, Result};
use crate::signature::TensorShape;
use crate::tensor::Tensor;

/// How a node depends on a chosen set of arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Linearity {
    /// Identically zero.
    Zero,
    /// Does not depend on the set.
    Indep,
    Linear,
    Nonlinear,
}

use Linearity::*;

fn combine_sum(cs: &[Linearity]) -> Linearity {
    if cs.contains(&Nonlinear) {
        return Nonlinear;
    }
    let lin = cs.contains(&Linear);
    let ind = cs.contains(&Indep);
    match (lin, ind) {
        (true, true) => Nonlinear,
        (true, false) => Linear,
        (false, true) => Indep,
        (false, false) => Zero,
    }
}

fn combine_product(a: Linearity, b: Linearity) -> Linearity {
    match (a, b) {
        (Zero, _) | (_, Zero) => Zero,
        (Nonlinear, _) | (_, Nonlinear) | (Linear, Linear) => Nonlinear,
        (Linear, Indep) | (Indep, Linear) => Linear,
        (Indep, Indep) => Indep,
    }
}

fn classify_node(e: &Expr, s_mask: u64, ops: &[Linearity]) -> Linearity {
    match e.kind() {
        Kind::Const(t) => {
            if t.is_zero() {
                Zero
            } else {
                Indep
            }
        }
        Kind::Param(_) => Indep,
        Kind::Arg(i) => {
            if s_mask & (1 << i) != 0 {
                Linear
            } else {
                Indep
            }
        }
        Kind::Apply(p, _) => {
            if ops.iter().all(|c| matches!(c, Zero | Indep)) {
                return if ops.iter().all(|c| *c == Zero) { Zero } else { Indep };
            }
            match p {
                Prim::Add | Prim::Sub | Prim::StackLast(_) => combine_sum(ops),
                Prim::Mul | Prim::TensorDot(_) => combine_product(ops[0], ops[1]),
                Prim::Div => match (ops[0], ops[1]) {
                    (Linear, Indep) => Linear,
                    (Zero, Indep) => Zero,
                    _ => Nonlinear,
                },
                Prim::Neg
                | Prim::Sum
                | Prim::PermuteAxes(_)
                | Prim::Trace(_)
                | Prim::Index(_)
                | Prim::SliceLast(..)
                | Prim::Broadcast(_)
                | Prim::Reshape(_) => ops[0],
                _ => Nonlinear,
            }
        }
    }
}

fn classify(e: &Expr, s_mask: u64) -> (Vec<Expr>, HashMap<usize, Linearity>) {
    let order = Expr::topo(std::slice::from_ref(e));
    let mut cls: HashMap<usize, Linearity> = HashMap::with_capacity(order.len());
    for n in &order {
        let ops: Vec<Linearity> = n.operands().iter().map(|o| cls[&o.ptr()]).collect();
        cls.insert(n.ptr(), classify_node(n, s_mask, &ops));
    }
    (order, cls)
}

pub fn linearity(e: &Expr, s_mask: u64) -> Linearity {
    let (_, cls) = classify(e, s_mask);
    cls[&e.ptr()]
}

/// The arguments in which `e` is jointly linear, chosen greedily in
/// ascending order. Unreferenced arguments are included.
pub fn linear_args(e: &Expr, n_args: usize) -> u64 {
    let all = if n_args >= 64 { u64::MAX } else { (1u64 << n_args) - 1 };
    if e.is_zero() {
        return all;
    }
    let mut s = 0u64;
    for i in 0..n_args {
        if e.arg_mask() & (1 << i) == 0 {
            continue;
        }
        let trial = s | (1 << i);
        if matches!(linearity(e, trial), Linear | Zero) {
            s = trial;
        }
    }
    // ignored args join a nonempty set only
    if s != 0 {
        s |= all & !e.arg_mask();
    }
    s
}

/// Sum a cotangent down to a scalar operand that was broadcast.
fn reduce_to(c: Expr, shape: &TensorShape) -> Expr {
    if c.shape() != shape && shape.is_scalar() {
        c.sum()
    } else {
        c
    }
}

fn accumulate(map: &mut HashMap<usize, Expr>, key: usize, c: Expr) -> Result<()> {
    if c.is_zero() {
        return Ok(());
    }
    let v = match map.remove(&key) {
        Some(prev) => prev.add(&c)?,
        None => c,
    };
    map.insert(key, v);
    Ok(())
}

/// Transpose an expression that is linear in the arguments of `s_mask`.
/// Given a cotangent `ct` of the output's shape, returns the cotangent for
/// each argument in the set (absent entries are zero). Other arguments
/// stay free in the result.
pub fn transpose_linear(e: &Expr, s_mask: u64, ct: &Expr) -> Result<BTreeMap<usize, Expr>> {
    if ct.shape() != e.shape() {
        return Err(Error::ShapeMismatch(format!("cotangent is {}, output is {}", ct.shape(), e.shape())));
    }
    let (order, cls) = classify(e, s_mask);
    match cls[&e.ptr()] {
        Zero => return Ok(BTreeMap::new()),
        Linear => {}
        other => return Err(Error::NotLinear(format!("expression is {other:?} in the requested arguments"))),
    }
    let mut cts: HashMap<usize, Expr> = HashMap::new();
    cts.insert(e.ptr(), ct.clone());
    let mut out = BTreeMap::new();
    for n in order.iter().rev() {
        if cls[&n.ptr()] != Linear {
            continue;
        }
        let Some(c) = cts.remove(&n.ptr()) else { continue };
        let ops = match n.kind() {
            Kind::Arg(i) => {
                let v = match out.remove(i) {
                    Some(prev) => c.add(&prev)?,
                    None => c,
                };
                out.insert(*i, v);
                continue;
            }
            Kind::Apply(_, ops) => ops,
            _ => continue,
        };
        let Kind::Apply(p, _) = n.kind() else { unreachable!() };
        let lin = |k: usize| cls[&ops[k].ptr()] == Linear;
        let mut push = |k: usize, v: Expr| accumulate(&mut cts, ops[k].ptr(), reduce_to(v, ops[k].shape()));
        match p {
            Prim::Add | Prim::Sub => {
                if lin(0) {
                    push(0, c.clone())?;
                }
                if lin(1) {
                    push(1, if *p == Prim::Sub { c.neg() } else { c.clone() })?;
                }
            }
            Prim::Mul => {
                if lin(0) {
                    push(0, c.mul(&ops[1])?)?;
                }
                if lin(1) {
                    push(1, c.mul(&ops[0])?)?;
                }
            }
            Prim::Div => push(0, c.div(&ops[1])?)?,
            Prim::Neg => push(0, c.neg())?,
            Prim::Sum | Prim::Broadcast(_) => {
                let s = ops[0].shape().clone();
                let v = if matches!(p, Prim::Sum) && !s.is_scalar() { c.broadcast_to(s)? } else { c.sum() };
                push(0, v)?
            }
            Prim::TensorDot(k) => {
                let (a, b) = (&ops[0], &ops[1]);
                let (ra, rb) = (a.shape().rank(), b.shape().rank());
                if lin(0) {
                    let perm: Vec<usize> = (*k..rb).chain(0..*k).collect();
                    push(0, c.tensordot(&b.permute_axes(perm)?, rb - k)?)?;
                }
                if lin(1) {
                    let rp = ra - k;
                    let perm: Vec<usize> = (rp..ra).chain(0..rp).collect();
                    push(1, a.permute_axes(perm)?.tensordot(&c, rp)?)?;
                }
            }
            Prim::PermuteAxes(perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &q) in perm.iter().enumerate() {
                    inv[q] = i;
                }
                push(0, c.permute_axes(inv)?)?
            }
            Prim::Trace(block) => push(0, c.outer(&Expr::constant(Tensor::identity(block))))?,
            Prim::Index(flat) => push(0, c.mul(&Expr::constant(Tensor::basis(ops[0].shape().clone(), *flat)))?)?,
            Prim::StackLast(tail) => {
                for k in 0..ops.len() {
                    if lin(k) {
                        push(k, c.slice_last(tail.clone(), k)?)?;
                    }
                }
            }
            Prim::SliceLast(tail, j) => {
                let parts = (0..tail.numel())
                    .map(|k| if k == *j { c.clone() } else { Expr::zeros(c.shape().clone()) })
                    .collect();
                push(0, Expr::stack_last(parts, tail.clone())?)?
            }
            Prim::Reshape(_) => push(0, c.reshape(ops[0].shape().clone())?)?,
            _ => return Err(Error::MissingRule(format!("no transpose rule for {}", p.name()))),
        }
    }
    Ok(out)
}

/// Transpose of a function linear in argument `argnum`. The result takes
/// the remaining arguments in order followed by the cotangent `y`.
pub fn transpose1(e: &Expr, argnum: usize, arg_shapes: &[TensorShape]) -> Result<Expr> {
    let n = arg_shapes.len();
    if argnum >= n {
        return Err(Error::IndexOutOfRange { index: argnum, len: n });
    }
    let y = Expr::arg(n, e.shape().clone())?;
    let ct = transpose_linear(e, 1 << argnum, &y)?
        .remove(&argnum)
        .unwrap_or_else(|| Expr::zeros(arg_shapes[argnum].clone()));
    if ct.arg_mask() & (1 << argnum) != 0 {
        return Err(Error::NotLinear(format!("transpose still depends on argument {argnum}")));
    }
    ct.remap_args(&|i| if i > argnum { i - 1 } else { i })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arg(i: usize, dims: &[usize]) -> Expr {
        Expr::arg(i, TensorShape::new(dims)).unwrap()
    }

    #[test]
    fn classifies_affine_as_nonlinear() {
        let x = arg(0, &[]);
        assert_eq!(linearity(&x.scale(2.0), 1), Linear);
        assert_eq!(linearity(&x.add_scalar(1.0), 1), Nonlinear);
        assert_eq!(linearity(&x.sin(), 1), Nonlinear);
        let y = arg(1, &[]);
        assert_eq!(linear_args(&x.mul(&y).unwrap(), 2), 1);
    }

    #[test]
    fn matvec_transposes_to_transpose_matvec() {
        let m = Tensor::new(TensorShape::new(&[2, 3]), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let v = arg(0, &[3]);
        let e = Expr::constant(m).dot(&v).unwrap();
        let t = transpose1(&e, 0, &[TensorShape::vector(3)]).unwrap();
        let r = t.eval(&[Tensor::vector(&[1., 1.])]).unwrap();
        assert_eq!(r, Tensor::vector(&[5., 7., 9.]));
    }

    #[test]
    fn nonlinear_transpose_is_rejected() {
        let x = arg(0, &[]);
        let err = transpose1(&x.sin(), 0, &[TensorShape::scalar()]).unwrap_err();
        assert!(matches!(err, Error::NotLinear(_)));
    }
}
