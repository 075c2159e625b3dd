// SPDX-License-Identifier: Apache-2.0

use serde_json::{json, Value};

use super::{Body, FunctionValue};

fn hex(id: u128) -> String {
    format!("{id:032x}")
}

/// JSON listing of every node reachable from `root`, children first.
pub fn graph_json(root: &FunctionValue) -> Value {
    let nodes: Vec<Value> = root
        .topo()
        .iter()
        .map(|f| {
            let params = match f.body() {
                Body::Leaf(e) => json!({ "expr": format!("{e:?}") }),
                Body::Var(v) => json!({ "var": v }),
                Body::Nabla(_, a) | Body::LinearTranspose(_, a) => json!({ "argnum": a }),
                Body::Integrate(_, a, g) => {
                    json!({ "argnum": a, "grid": { "kind": g.kind(), "n": g.len(), "id": hex(g.id()) } })
                }
                Body::PermuteArgs(_, p) => json!({ "perm": p }),
                Body::Broadcast(_, s, p) => json!({
                    "shapes": s.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
                    "positions": p,
                }),
                _ => json!({}),
            };
            json!({
                "id": hex(f.id()),
                "primitive": f.body().primitive(),
                "params": params,
                "children": f.body().children().iter().map(|c| hex(c.id())).collect::<Vec<_>>(),
                "signature": f.signature().to_string(),
                "linear_flags": f.linear_flags(),
            })
        })
        .collect();
    json!({ "root": hex(root.id()), "nodes": nodes })
}
