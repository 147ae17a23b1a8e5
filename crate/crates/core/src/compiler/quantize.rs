//! Static symmetric per-tensor INT8 quantization driven by calibration runs.

use std::collections::{BTreeMap, HashMap};

use super::CompileError;
use crate::model_ir::{GraphNode, ModelGraph, OpKind, TensorData, TensorValue};
use crate::quant::{self, QuantParams};
use crate::reference::{self, PRE_ACTIVATION_SUFFIX};

/// FP32 samples for calibration; each sample holds one value per graph input.
#[derive(Debug, Clone, Default)]
pub struct CalibrationSet {
    pub samples: Vec<Vec<TensorValue>>,
}

impl CalibrationSet {
    /// Samples for a single-input graph.
    pub fn single_input(values: Vec<TensorValue>) -> Self {
        Self {
            samples: values.into_iter().map(|v| vec![v]).collect(),
        }
    }

    pub fn check(&self, g: &ModelGraph) -> Result<(), CompileError> {
        if self.samples.is_empty() {
            return Err(CompileError::Calibration("calibration set is empty".into()));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.len() != g.inputs.len() {
                return Err(CompileError::Calibration(format!(
                    "sample {i} has {} tensors, graph takes {}",
                    s.len(),
                    g.inputs.len()
                )));
            }
            for (v, spec) in s.iter().zip(&g.inputs) {
                if v.as_f32().is_none() || v.spec.numel() != spec.numel() {
                    return Err(CompileError::Calibration(format!(
                        "sample {i}: expected FP32 {:?} for {}, got {:?} {:?}",
                        spec.shape, spec.name, v.spec.dtype, v.spec.shape
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct QuantizeOptions {
    /// Fail on an all-zero calibration range instead of falling back to scale 1.0.
    pub strict_ranges: bool,
}

#[derive(Debug, Clone)]
pub struct Quantized {
    pub graph: ModelGraph,
    /// Tensors whose range was identically zero and got scale 1.0.
    pub degenerate: Vec<String>,
}

/// Attaches `QuantParams` to every tensor a node touches, converts weights to
/// INT8 and biases to INT32. Existing parameters are kept.
pub fn quantize(g: &ModelGraph, cal: &CalibrationSet, opts: QuantizeOptions) -> Result<Quantized, CompileError> {
    let mut g = g.clone();
    let fixed = fold_qdq(&mut g)?;
    cal.check(&g)?;
    let ranges = reference::calibrate_ranges(&g, &cal.samples)?;

    let mut degenerate = Vec::new();
    let scale_for = |name: &str, max_abs: f32, degenerate: &mut Vec<String>| -> Result<QuantParams, CompileError> {
        match QuantParams::from_max_abs(max_abs) {
            Some(q) => Ok(q),
            None if opts.strict_ranges => Err(CompileError::DegenerateRange(name.to_string())),
            None => {
                log::warn!("tensor {name} is identically zero over calibration; using scale 1.0");
                degenerate.push(name.to_string());
                Ok(QuantParams::unit())
            }
        }
    };

    // activation scales: preset > QDQ-fixed > calibrated
    let mut preset: HashMap<String, QuantParams> = HashMap::new();
    for n in &g.nodes {
        for (k, q) in &n.quant {
            preset.entry(k.clone()).or_insert(*q);
        }
    }
    let weight_like: std::collections::HashSet<String> = g
        .nodes
        .iter()
        .filter(|n| n.kind.has_weights())
        .flat_map(|n| n.inputs.iter().skip(1).cloned())
        .collect();
    let mut act: BTreeMap<String, QuantParams> = BTreeMap::new();
    for (name, &max_abs) in &ranges {
        let q = if let Some(q) = preset.get(name) {
            *q
        } else if let Some(q) = fixed.get(name) {
            *q
        } else {
            scale_for(name, max_abs, &mut degenerate)?
        };
        act.insert(name.clone(), q);
    }
    for (name, v) in &g.initializers {
        if weight_like.contains(name) || act.contains_key(name) {
            continue;
        }
        // constant activation operand
        let q = match preset.get(name) {
            Some(q) => *q,
            None => {
                let max_abs = v.as_f32().map_or(0.0, |d| d.iter().fold(0f32, |m, x| m.max(x.abs())));
                scale_for(name, max_abs, &mut degenerate)?
            }
        };
        act.insert(name.clone(), q);
    }
    unify_scales(&g, &mut act);

    // weights and biases
    let mut weight_q: BTreeMap<String, QuantParams> = BTreeMap::new();
    let mut new_inits = g.initializers.clone();
    for n in g.nodes.iter().filter(|n| n.kind.has_weights()) {
        let wname = &n.inputs[1];
        let w = &g.initializers.get(wname).ok_or_else(|| CompileError::Unsupported {
            node: n.id.clone(),
            kind: n.kind,
            reason: format!("weights `{wname}` must be an initializer"),
        })?;
        let wq = match (&w.data, preset.get(wname)) {
            (TensorData::Int8(_), Some(q)) => *q,
            (TensorData::Fp32(d), _) => {
                let max_abs = d.iter().fold(0f32, |m, x| m.max(x.abs()));
                let q = scale_for(wname, max_abs, &mut degenerate)?;
                new_inits.insert(
                    wname.clone(),
                    TensorValue::int8(wname.clone(), w.spec.shape.clone(), quant::quantize_slice(d, q.scale))?,
                );
                q
            }
            _ => {
                return Err(CompileError::Calibration(format!(
                    "weights `{wname}` of node {} have dtype {:?} without a scale",
                    n.id, w.spec.dtype
                )))
            }
        };
        weight_q.insert(wname.clone(), wq);
        if let Some(bname) = n.inputs.get(2) {
            let in_s = act[&n.inputs[0]].scale;
            let bq = QuantParams::new(in_s * wq.scale).map_err(|e| CompileError::Calibration(e.to_string()))?;
            let b = &g.initializers.get(bname).ok_or_else(|| CompileError::Unsupported {
                node: n.id.clone(),
                kind: n.kind,
                reason: format!("bias `{bname}` must be an initializer"),
            })?;
            match &b.data {
                TensorData::Fp32(d) => {
                    new_inits.insert(
                        bname.clone(),
                        TensorValue::int32(bname.clone(), b.spec.shape.clone(), quant::quantize_bias(d, in_s, wq.scale))?,
                    );
                    weight_q.insert(bname.clone(), bq);
                }
                TensorData::Int32(_) => {
                    weight_q.insert(bname.clone(), preset.get(bname).copied().unwrap_or(bq));
                }
                TensorData::Int8(_) => {
                    return Err(CompileError::Calibration(format!("bias `{bname}` must be FP32 or INT32")));
                }
            }
        }
    }
    // constant activation operands become INT8 as well
    for (name, v) in g.initializers.iter() {
        if weight_like.contains(name) {
            continue;
        }
        if let (TensorData::Fp32(d), Some(q)) = (&v.data, act.get(name)) {
            new_inits.insert(
                name.clone(),
                TensorValue::int8(name.clone(), v.spec.shape.clone(), quant::quantize_slice(d, q.scale))?,
            );
        }
    }
    g.initializers = new_inits;

    for n in &mut g.nodes {
        let mut q = n.quant.clone();
        for t in n.inputs.iter().chain(n.outputs.iter()) {
            if let Some(p) = weight_q.get(t).or_else(|| act.get(t)) {
                q.entry(t.clone()).or_insert(*p);
            }
        }
        if n.kind == OpKind::FusedConvSiLU {
            let pre = format!("{}{PRE_ACTIVATION_SUFFIX}", n.outputs[0]);
            if let Some(p) = act.get(&pre) {
                q.entry(pre).or_insert(*p);
            }
        }
        n.quant = q;
    }
    Ok(Quantized { graph: g, degenerate })
}

/// Removes QuantizeLinear -> DequantizeLinear pairs; the Q scale becomes the
/// fixed scale of the pair's input tensor.
fn fold_qdq(g: &mut ModelGraph) -> Result<HashMap<String, QuantParams>, CompileError> {
    let mut fixed = HashMap::new();
    loop {
        let consumers = g.consumers();
        let Some(qi) = g.nodes.iter().position(|n| n.kind == OpKind::QuantizeLinear) else {
            break;
        };
        let q = g.nodes[qi].clone();
        let users = consumers.get(q.outputs[0].as_str()).cloned().unwrap_or_default();
        let scale = q.attr_float("scale")? as f32;
        let all_dq = !users.is_empty()
            && !g.is_graph_output(&q.outputs[0])
            && users.iter().all(|&(ni, _)| {
                let n: &GraphNode = &g.nodes[ni];
                n.kind == OpKind::DequantizeLinear
                    && n.attr_float("scale").map(|s| s as f32 == scale).unwrap_or(false)
                    && !g.is_graph_output(&n.outputs[0])
            });
        if !all_dq {
            return Err(CompileError::Unsupported {
                node: q.id.clone(),
                kind: q.kind,
                reason: "QuantizeLinear must feed matching DequantizeLinear nodes".into(),
            });
        }
        let x = q.inputs[0].clone();
        let dq_outputs: Vec<String> = users.iter().map(|&(ni, _)| g.nodes[ni].outputs[0].clone()).collect();
        let mut remove: Vec<usize> = users.iter().map(|&(ni, _)| ni).collect();
        remove.push(qi);
        remove.sort_unstable();
        remove.dedup();
        for i in remove.into_iter().rev() {
            g.nodes.remove(i);
        }
        for o in dq_outputs {
            g.rewire(&o, &x);
        }
        fixed.insert(x, QuantParams::new(scale).map_err(|e| CompileError::Calibration(e.to_string()))?);
    }
    // stray DequantizeLinear nodes have no INT8 producer
    if let Some(n) = g.nodes.iter().find(|n| n.kind == OpKind::DequantizeLinear) {
        return Err(CompileError::Unsupported {
            node: n.id.clone(),
            kind: n.kind,
            reason: "DequantizeLinear without a matching QuantizeLinear".into(),
        });
    }
    Ok(fixed)
}

/// Forces shared scales where kernels move codes without rescaling:
/// MaxPool in/out, Concat parts/out, Split in/parts. Each group takes the
/// largest member scale.
fn unify_scales(g: &ModelGraph, act: &mut BTreeMap<String, QuantParams>) {
    let mut parent: HashMap<String, String> = HashMap::new();
    fn find(parent: &mut HashMap<String, String>, x: &str) -> String {
        let p = parent.get(x).cloned().unwrap_or_else(|| x.to_string());
        if p == x {
            return p;
        }
        let r = find(parent, &p);
        parent.insert(x.to_string(), r.clone());
        r
    }
    let union = |a: &str, b: &str, parent: &mut HashMap<String, String>| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            parent.insert(hi, lo);
        }
    };
    let mut names: Vec<String> = Vec::new();
    for n in &g.nodes {
        if matches!(n.kind, OpKind::MaxPool | OpKind::Concat | OpKind::Split) {
            let first = n.inputs[0].clone();
            for t in n.inputs.iter().chain(n.outputs.iter()) {
                union(&first, t, &mut parent);
                names.push(t.clone());
            }
        }
    }
    let mut group_scale: HashMap<String, f32> = HashMap::new();
    for name in &names {
        let root = find(&mut parent, name);
        if let Some(q) = act.get(name) {
            let e = group_scale.entry(root).or_insert(q.scale);
            *e = e.max(q.scale);
        }
    }
    for name in &names {
        let root = find(&mut parent, name);
        if let (Some(s), Some(q)) = (group_scale.get(&root), act.get_mut(name)) {
            q.scale = *s;
        }
    }
}
