use crate::model_ir::{GraphNode, ModelGraph, OpKind};

/// Rewrites accelerator-supported patterns into fused nodes:
///
/// * `Mul(x, Sigmoid(x))` -> `SiLU(x)`
/// * `Conv2D -> ReLU` -> `FusedConvReLU`
/// * `Conv2D -> SiLU` -> `FusedConvSiLU`
/// * `Add -> ReLU` -> `FusedAddReLU`
///
/// A pattern only fires when the intermediate tensor has exactly one
/// consumer and is not a graph output.
pub fn fuse(g: &ModelGraph) -> ModelGraph {
    let mut g = g.clone();
    while fuse_silu(&mut g) {}
    while fuse_activation(&mut g) {}
    g
}

/// The sole consumer of `tensor`, if it has exactly one and is internal.
fn sole_consumer(g: &ModelGraph, tensor: &str) -> Option<(usize, usize)> {
    if g.is_graph_output(tensor) {
        return None;
    }
    let users = g.consumers();
    match users.get(tensor).map(|v| v.as_slice()) {
        Some([only]) => Some(*only),
        _ => None,
    }
}

fn fuse_silu(g: &mut ModelGraph) -> bool {
    let order = match g.topological_indices() {
        Ok(o) => o,
        Err(_) => return false,
    };
    for si in order {
        let sig = &g.nodes[si];
        if sig.kind != OpKind::Sigmoid {
            continue;
        }
        let (x, t) = (sig.inputs[0].clone(), sig.outputs[0].clone());
        let Some((mi, slot)) = sole_consumer(g, &t) else { continue };
        let mul = &g.nodes[mi];
        if mul.kind != OpKind::Mul || mul.inputs[1 - slot] != x {
            continue;
        }
        let mut fused = GraphNode::new(mul.id.clone(), OpKind::SiLU, &[&x], &[&mul.outputs[0]]);
        fused.quant = merged_quant(&g.nodes[si], mul);
        g.nodes[mi] = fused;
        g.nodes.remove(si);
        return true;
    }
    false
}

fn fused_kind(producer: OpKind, activation: OpKind) -> Option<OpKind> {
    match (producer, activation) {
        (OpKind::Conv2D, OpKind::ReLU) => Some(OpKind::FusedConvReLU),
        (OpKind::Conv2D, OpKind::SiLU) => Some(OpKind::FusedConvSiLU),
        (OpKind::Add, OpKind::ReLU) => Some(OpKind::FusedAddReLU),
        _ => None,
    }
}

fn fuse_activation(g: &mut ModelGraph) -> bool {
    let order = match g.topological_indices() {
        Ok(o) => o,
        Err(_) => return false,
    };
    for pi in order {
        let prod = &g.nodes[pi];
        if !matches!(prod.kind, OpKind::Conv2D | OpKind::Add) {
            continue;
        }
        let Some((ai, _)) = sole_consumer(g, &prod.outputs[0]) else { continue };
        let act = &g.nodes[ai];
        let Some(kind) = fused_kind(prod.kind, act.kind) else { continue };
        let mut fused = prod.clone();
        fused.kind = kind;
        fused.outputs = act.outputs.clone();
        fused.quant = merged_quant(prod, act);
        g.nodes[pi] = fused;
        g.nodes.remove(ai);
        return true;
    }
    false
}

fn merged_quant(a: &GraphNode, b: &GraphNode) -> std::collections::BTreeMap<String, crate::quant::QuantParams> {
    let mut q = a.quant.clone();
    q.extend(b.quant.iter().map(|(k, v)| (k.clone(), *v)));
    q
}
