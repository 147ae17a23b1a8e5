use std::collections::BTreeMap;

use crate::model_ir::{ModelGraph, OpKind, Producer, TensorValue};
use crate::reference;

/// Simplifies a validated graph: folds constant-only nodes into
/// initializers, then removes Flatten/Reshape nodes whose consumers treat
/// tensors as linear memory. Total on valid graphs.
pub fn optimize(g: &ModelGraph) -> ModelGraph {
    let mut g = g.clone();
    fold_constants(&mut g);
    while remove_one_view(&mut g) {}
    g
}

fn fold_constants(g: &mut ModelGraph) {
    loop {
        let candidate = g.nodes.iter().position(|n| {
            !n.inputs.is_empty()
                && n.inputs.iter().all(|t| g.initializers.contains_key(t))
                && !n.outputs.iter().any(|o| g.is_graph_output(o))
        });
        let Some(idx) = candidate else { break };
        let node = g.nodes[idx].clone();
        let ins: Vec<reference::F32Tensor> = match node
            .inputs
            .iter()
            .map(|t| {
                let v = &g.initializers[t];
                v.as_f32().map(|d| reference::F32Tensor {
                    shape: v.spec.shape.clone(),
                    data: d.to_vec(),
                })
            })
            .collect::<Option<Vec<_>>>()
        {
            Some(v) => v,
            None => break,
        };
        let refs: Vec<&reference::F32Tensor> = ins.iter().collect();
        let Ok((outs, _)) = reference::eval_node(&node, &refs) else {
            log::warn!("constant folding skipped node {}", node.id);
            break;
        };
        let mut folded = BTreeMap::new();
        for (name, t) in node.outputs.iter().zip(outs) {
            match TensorValue::fp32(name.clone(), t.shape, t.data) {
                Ok(v) => {
                    folded.insert(name.clone(), v);
                }
                Err(_) => return,
            }
        }
        g.nodes.remove(idx);
        g.initializers.extend(folded);
        // drop initializers nobody reads any more
        let used: std::collections::HashSet<String> =
            g.nodes.iter().flat_map(|n| n.inputs.iter().cloned()).collect();
        g.initializers.retain(|k, _| used.contains(k));
    }
}

/// Consumers for which a view change is invisible: MVM reads a flat vector,
/// and a further Flatten/Reshape only re-labels the same bytes.
fn layout_agnostic(kind: OpKind) -> bool {
    matches!(kind, OpKind::MVM | OpKind::Flatten | OpKind::Reshape)
}

fn remove_one_view(g: &mut ModelGraph) -> bool {
    let producers = g.producers();
    let consumers = g.consumers();
    let mut plan = None;
    for (idx, node) in g.nodes.iter().enumerate() {
        if !matches!(node.kind, OpKind::Flatten | OpKind::Reshape) {
            continue;
        }
        let (input, output) = (&node.inputs[0], &node.outputs[0]);
        let users = consumers.get(output.as_str()).cloned().unwrap_or_default();
        if !users.iter().all(|&(ni, _)| layout_agnostic(g.nodes[ni].kind)) {
            continue;
        }
        if g.is_graph_output(output) {
            // the producer of `input` takes over the output name
            match producers.get(input.as_str()) {
                Some(Producer::Node(pi, oi)) if !g.is_graph_output(input) => {
                    plan = Some((idx, input.clone(), output.clone(), Some((*pi, *oi))));
                    break;
                }
                _ => continue,
            }
        } else {
            plan = Some((idx, input.clone(), output.clone(), None));
            break;
        }
    }
    let Some((idx, input, output, rename)) = plan else {
        return false;
    };
    g.nodes.remove(idx);
    match rename {
        Some((pi, oi)) => {
            let pi = if pi > idx { pi - 1 } else { pi };
            g.nodes[pi].outputs[oi] = output.clone();
            g.rewire(&input, &output);
        }
        None => g.rewire(&output, &input),
    }
    true
}
