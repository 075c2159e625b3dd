// SPDX-License-Identifier: Apache-2.0

//! Interpreter for function graphs.

use std::collections::HashMap;

use super::{kept_positions, Body, FunctionValue};
use crate::error::{Error, Result};
use crate::memo::{CallCache, CallKey};
use crate::quadrature::pairwise_sum;
use crate::tensor::Tensor;

/// State shared by the evaluations of one session: external parameters, an
/// optional call cache and optional per-node computation counts.
#[derive(Default)]
pub struct EvalSession {
    params: Vec<Tensor>,
    cache: Option<CallCache>,
    counts: Option<HashMap<u128, u64>>,
}

impl EvalSession {
    pub fn new() -> EvalSession {
        EvalSession::default()
    }

    pub fn with_params(mut self, params: Vec<Tensor>) -> Self {
        self.params = params;
        self
    }

    pub fn with_cache(mut self, cache: CallCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Record how often each node is actually computed (cache misses).
    pub fn counting(mut self) -> Self {
        self.counts = Some(HashMap::new());
        self
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn cache(&self) -> Option<&CallCache> {
        self.cache.as_ref()
    }

    pub fn take_cache(&mut self) -> Option<CallCache> {
        self.cache.take()
    }

    pub fn computations_of(&self, f: &FunctionValue) -> u64 {
        self.counts.as_ref().and_then(|c| c.get(&f.id()).copied()).unwrap_or(0)
    }

    pub fn total_computations(&self) -> u64 {
        self.counts.as_ref().map(|c| c.values().sum()).unwrap_or(0)
    }
}

impl FunctionValue {
    fn check_args(&self, args: &[Tensor]) -> Result<()> {
        let want = self.signature().args();
        if want.len() != args.len() {
            return Err(Error::ArityMismatch { expected: want.len(), actual: args.len() });
        }
        for (i, (w, a)) in want.iter().zip(args).enumerate() {
            if w != a.shape() {
                return Err(Error::ShapeMismatch(format!("argument {i} should be {w}, got {}", a.shape())));
            }
        }
        Ok(())
    }

    /// Evaluate every return slot at `args`.
    pub fn eval_in(&self, args: &[Tensor], s: &mut EvalSession) -> Result<Vec<Tensor>> {
        self.check_args(args)?;
        let key = s.cache.as_ref().map(|_| CallKey::new(self.id(), args));
        if let (Some(k), Some(c)) = (&key, s.cache.as_mut()) {
            if let Some(v) = c.get(k) {
                return Ok(v);
            }
        }
        let out = self.compute(args, s)?;
        if let Some(c) = s.counts.as_mut() {
            *c.entry(self.id()).or_insert(0) += 1;
        }
        if let (Some(k), Some(c)) = (key, s.cache.as_mut()) {
            c.put(k, out.clone());
        }
        Ok(out)
    }

    fn compute(&self, args: &[Tensor], s: &mut EvalSession) -> Result<Vec<Tensor>> {
        match self.body() {
            Body::Leaf(_) | Body::Nabla(..) | Body::Linearize(_) | Body::LinearTranspose(..) => {
                self.compiled()?.eval(args, &s.params)
            }
            Body::Var(v) => Err(Error::UnboundVariable(*v)),
            Body::Compose(f, gs) => {
                let mut fed = Vec::with_capacity(f.arity());
                for g in gs {
                    fed.extend(g.eval_in(args, s)?);
                }
                f.eval_in(&fed, s)
            }
            Body::Integrate(f, a, grid) => {
                let mut full: Vec<Tensor> = Vec::with_capacity(args.len() + 1);
                full.extend_from_slice(&args[..*a]);
                full.push(grid.points()[0].clone());
                full.extend_from_slice(&args[*a..]);
                let mut terms = Vec::with_capacity(grid.len());
                for (p, w) in grid.points().iter().zip(grid.weights()) {
                    full[*a] = p.clone();
                    let v = f.call_in(&full, s)?;
                    terms.push(v.map(|x| x * w));
                }
                Ok(vec![pairwise_sum(&terms)])
            }
            Body::PermuteArgs(f, perm) => {
                let inner: Vec<Tensor> = perm.iter().map(|&p| args[p].clone()).collect();
                f.eval_in(&inner, s)
            }
            Body::Zip(f, g) => {
                let nf = f.arity();
                let mut out = f.eval_in(&args[..nf], s)?;
                out.extend(g.eval_in(&args[nf..], s)?);
                Ok(out)
            }
            Body::Broadcast(f, _, positions) => {
                let inner: Vec<Tensor> =
                    kept_positions(positions, args.len()).into_iter().map(|p| args[p].clone()).collect();
                f.eval_in(&inner, s)
            }
        }
    }
}
