// SPDX-License-Identifier: Apache-2.0

//! Flattening function graphs into first-order expressions.

use std::sync::Arc;

use super::{kept_positions, Body, FunctionValue};
use crate::engine::{self, Expr, Linearity};
use crate::error::{Error, Result};
use crate::signature::TensorShape;

fn pairwise_add(mut v: Vec<Expr>) -> Result<Expr> {
    while v.len() > 1 {
        let mut next = Vec::with_capacity(v.len().div_ceil(2));
        let mut it = v.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.add(&b)?),
                None => next.push(a),
            }
        }
        v = next;
    }
    Ok(v.pop().expect("at least one term"))
}

/// Largest expression an unrolled integral may produce. Bigger graphs are
/// left to the interpreter.
const UNROLL_LIMIT: usize = 1 << 18;

fn remap_all(es: &[Expr], shapes: &[TensorShape], f: &dyn Fn(usize) -> usize) -> Result<Vec<Expr>> {
    Expr::substitute(es, &|i| Expr::arg(f(i), shapes[i].clone()).ok(), u64::MAX, None)
}

impl FunctionValue {
    /// One expression per return slot, over this function's arguments.
    pub fn lower(&self) -> Result<Arc<Vec<Expr>>> {
        self.0.lowered.get_or_init(|| self.lower_uncached().map(Arc::new)).clone()
    }

    /// The single return expression.
    pub fn lower_one(&self) -> Result<Expr> {
        self.signature().ret()?;
        Ok(self.lower()?[0].clone())
    }

    fn lower_uncached(&self) -> Result<Vec<Expr>> {
        match self.body() {
            Body::Leaf(e) => Ok(vec![e.clone()]),
            Body::Var(v) => Err(Error::UnboundVariable(*v)),
            Body::Compose(f, gs) => {
                let mut fed = Vec::new();
                for g in gs {
                    fed.extend(g.lower()?.iter().cloned());
                }
                Expr::substitute(&f.lower()?, &|i| fed.get(i).cloned(), u64::MAX, None)
            }
            Body::Nabla(f, a) => {
                let e = f.lower_one()?;
                Ok(vec![engine::jacobian(&e, *a, &f.signature().args()[*a])?])
            }
            Body::Linearize(f) => {
                let e = f.lower_one()?;
                let n = f.arity();
                let tangents = f
                    .signature()
                    .args()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Expr::arg(n + i, s.clone()).map(Some))
                    .collect::<Result<Vec<_>>>()?;
                let t = e.jvp(&tangents)?.unwrap_or_else(|| Expr::zeros(e.shape().clone()));
                Ok(vec![t])
            }
            Body::LinearTranspose(f, a) => {
                let mut e = f.lower_one()?;
                let fargs = f.signature().args();
                if !matches!(engine::linearity(&e, 1 << a), Linearity::Linear | Linearity::Zero) {
                    let others = f.linear_mask() & !(1 << a);
                    e = e.substitute_args(&|i| Some(Expr::zeros(fargs[i].clone())), others)?;
                }
                Ok(vec![engine::transpose1(&e, *a, fargs)?])
            }
            Body::Integrate(f, a, grid) => {
                let e = f.lower_one()?;
                let size = e.node_count().saturating_mul(grid.len());
                if size > UNROLL_LIMIT {
                    return Err(Error::Unsupported(format!("unrolling an integral into {size} nodes")));
                }
                let fargs = f.signature().args();
                let terms = grid
                    .points()
                    .iter()
                    .zip(grid.weights())
                    .map(|(p, w)| {
                        let t = e.substitute_args(
                            &|i| {
                                if i == *a {
                                    Some(Expr::constant(p.clone()))
                                } else if i > *a {
                                    Expr::arg(i - 1, fargs[i].clone()).ok()
                                } else {
                                    None
                                }
                            },
                            u64::MAX,
                        )?;
                        Ok(t.scale(*w))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(vec![pairwise_add(terms)?])
            }
            Body::PermuteArgs(f, perm) => remap_all(&f.lower()?, f.signature().args(), &|i| perm[i]),
            Body::Zip(f, g) => {
                let nf = f.arity();
                let mut out = f.lower()?.to_vec();
                out.extend(remap_all(&g.lower()?, g.signature().args(), &|i| nf + i)?);
                Ok(out)
            }
            Body::Broadcast(f, _, positions) => {
                let kept = kept_positions(positions, self.arity());
                remap_all(&f.lower()?, f.signature().args(), &|i| kept[i])
            }
        }
    }
}
