// SPDX-License-Identifier: Apache-2.0

//! Call caching for function graphs. A composed graph that reuses a
//! sub-function evaluates it once per distinct argument instead of once per
//! path to it.

use std::hash::{Hash, Hasher};
use std::num::NonZeroUsize;
use std::time::Instant;

use lru::LruCache;
use serde::Serialize;
use xxhash_rust::xxh3::xxh3_128;

use crate::error::Result;
use crate::operators::{EvalSession, FunctionValue};
use crate::tensor::Tensor;

pub const DEFAULT_CAPACITY: usize = 1 << 16;

#[derive(Clone, Debug, Eq)]
pub(crate) struct CallKey {
    node: u128,
    digest: u128,
    bytes: Box<[u8]>,
}

impl PartialEq for CallKey {
    fn eq(&self, o: &Self) -> bool {
        self.node == o.node && self.digest == o.digest && self.bytes == o.bytes
    }
}

impl Hash for CallKey {
    fn hash<H: Hasher>(&self, h: &mut H) {
        self.node.hash(h);
        self.digest.hash(h);
    }
}

impl CallKey {
    pub(crate) fn new(node: u128, args: &[Tensor]) -> CallKey {
        let mut bytes = Vec::new();
        for a in args {
            a.write_bytes(&mut bytes);
        }
        CallKey { node, digest: xxh3_128(&bytes), bytes: bytes.into_boxed_slice() }
    }
}

/// Bounded LRU map from (function node, argument bytes) to results.
pub struct CallCache {
    map: LruCache<CallKey, Vec<Tensor>>,
    hits: u64,
    misses: u64,
}

impl CallCache {
    pub fn new() -> CallCache {
        CallCache::with_capacity(DEFAULT_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> CallCache {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("capacity is at least one");
        CallCache { map: LruCache::new(cap), hits: 0, misses: 0 }
    }

    pub(crate) fn get(&mut self, key: &CallKey) -> Option<Vec<Tensor>> {
        let r = self.map.get(key).cloned();
        if r.is_some() {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        r
    }

    pub(crate) fn put(&mut self, key: CallKey, value: Vec<Tensor>) {
        self.map.put(key, value);
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn clear(&mut self) {
        self.map.clear();
        self.hits = 0;
        self.misses = 0;
    }
}

impl Default for CallCache {
    fn default() -> Self {
        CallCache::new()
    }
}

/// Evaluate with a fresh cache for this call.
pub fn eval_cached(f: &FunctionValue, args: &[Tensor], cache: &mut CallCache) -> Result<Vec<Tensor>> {
    let mut s = EvalSession::new().with_cache(std::mem::take(cache));
    let out = f.eval_in(args, &mut s);
    *cache = s.take_cache().unwrap_or_default();
    out
}

/// `h_0 = h`, `h_i = f(h_{i-1}) + g(h_{i-1})` with `h, f, g = sin, exp, tanh`.
pub fn nested_family(depth: usize) -> (FunctionValue, FunctionValue) {
    let h = FunctionValue::scalar_fn(|x| x.sin());
    let f = FunctionValue::scalar_fn(|x| x.exp());
    let g = FunctionValue::scalar_fn(|x| x.tanh());
    let mut cur = h.clone();
    for _ in 0..depth {
        let a = crate::operators::compose(&f, &[cur.clone()]).expect("scalar shapes compose");
        let b = crate::operators::compose(&g, &[cur]).expect("scalar shapes compose");
        cur = a.add(&b).expect("same signature");
    }
    (cur, h)
}

#[derive(Clone, Debug, Serialize)]
pub struct DepthRow {
    pub depth: usize,
    pub calls_cached: u64,
    pub calls_naive: u64,
    pub seconds_cached: f64,
    pub seconds_naive: f64,
    /// All node computations with the cache on.
    pub computations_cached: u64,
}

pub const DEPTH_CSV_HEADER: &str = "depth,calls_cached,calls_naive,seconds_cached,seconds_naive";

impl DepthRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{:.9},{:.9}",
            self.depth, self.calls_cached, self.calls_naive, self.seconds_cached, self.seconds_naive
        )
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Count innermost-function calls and time evaluation at `x = 0.5` for
/// depths `1..=depth_max`, with and without the cache. Timings are the
/// median of `reps` runs.
pub fn depth_benchmark(depth_max: usize, reps: usize) -> Result<Vec<DepthRow>> {
    let x = [Tensor::scalar(0.5)];
    let reps = reps.max(1);
    let mut rows = Vec::with_capacity(depth_max);
    for depth in 1..=depth_max {
        let (top, h) = nested_family(depth);
        let run = |cached: bool| -> Result<(u64, u64, f64)> {
            let mut times = Vec::with_capacity(reps);
            let mut counts = (0, 0);
            for _ in 0..reps {
                let mut s = EvalSession::new().counting();
                if cached {
                    s = s.with_cache(CallCache::new());
                }
                let t0 = Instant::now();
                let v = top.eval_in(&x, &mut s)?;
                times.push(t0.elapsed().as_secs_f64());
                std::hint::black_box(v);
                counts = (s.computations_of(&h), s.total_computations());
            }
            Ok((counts.0, counts.1, median(times)))
        };
        let (calls_cached, computations_cached, seconds_cached) = run(true)?;
        let (calls_naive, _, seconds_naive) = run(false)?;
        rows.push(DepthRow { depth, calls_cached, calls_naive, seconds_cached, seconds_naive, computations_cached });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_three_counts() {
        let rows = depth_benchmark(3, 1).unwrap();
        assert_eq!(rows[0].calls_cached, 1);
        assert_eq!(rows[2].calls_naive, 8);
        let d: Vec<u64> = rows.windows(2).map(|w| w[1].computations_cached - w[0].computations_cached).collect();
        assert!(d.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn cache_is_transparent() {
        let (top, _) = nested_family(6);
        let x = [Tensor::scalar(0.3)];
        let plain = top.eval_in(&x, &mut EvalSession::new()).unwrap();
        let mut c = CallCache::new();
        let cached = eval_cached(&top, &x, &mut c).unwrap();
        assert_eq!(plain[0].item().to_bits(), cached[0].item().to_bits());
        assert!(c.hits() > 0);
    }
}
