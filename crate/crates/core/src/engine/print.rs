// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::fmt::Write;

use super::{Expr, Kind, Prim};

fn prim_label(p: &Prim) -> String {
    match p {
        Prim::TensorDot(k) => format!("dot{k}"),
        Prim::PermuteAxes(q) => format!("permute{q:?}"),
        Prim::Trace(b) => format!("trace{b}"),
        Prim::Index(i) => format!("index[{i}]"),
        Prim::StackLast(t) => format!("stack{t}"),
        Prim::SliceLast(t, j) => format!("slice{t}[{j}]"),
        Prim::Broadcast(s) => format!("broadcast{s}"),
        Prim::Reshape(s) => format!("reshape{s}"),
        _ => p.name().to_string(),
    }
}

pub(super) fn pretty(e: &Expr) -> String {
    let order = Expr::topo(std::slice::from_ref(e));
    let mut id: HashMap<usize, usize> = HashMap::new();
    let mut out = String::new();
    for (k, n) in order.iter().enumerate() {
        id.insert(n.ptr(), k);
        let rhs = match n.kind() {
            Kind::Const(t) => format!("{t:?}"),
            Kind::Arg(i) => format!("x{i}"),
            Kind::Param(i) => format!("p{i}"),
            Kind::Apply(p, ops) => {
                let args: Vec<String> = ops.iter().map(|o| format!("%{}", id[&o.ptr()])).collect();
                format!("{}({})", prim_label(p), args.join(", "))
            }
        };
        let _ = writeln!(out, "%{k}: {} = {rhs}", n.shape());
    }
    out
}

/// Nested form, for small expressions and debugging.
pub(super) fn inline(e: &Expr) -> String {
    match e.kind() {
        Kind::Const(t) => format!("{t:?}"),
        Kind::Arg(i) => format!("x{i}"),
        Kind::Param(i) => format!("p{i}"),
        Kind::Apply(p, ops) => {
            let args: Vec<String> = ops.iter().map(inline).collect();
            format!("{}({})", prim_label(p), args.join(", "))
        }
    }
}
