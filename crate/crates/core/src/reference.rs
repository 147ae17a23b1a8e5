//! Single-threaded FP32 reference interpreter for [`ModelGraph`].
//!
//! Used for calibration, for checking that graph rewrites preserve
//! semantics, and as the un-quantized baseline for accuracy measurements.

use std::collections::{BTreeMap, HashMap};

use crate::exec::ExecError;
use crate::model_ir::shape::{self, Window};
use crate::model_ir::{GraphNode, ModelGraph, OpKind, TensorData, TensorValue};

#[derive(Debug, Clone, PartialEq)]
pub struct F32Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Suffix under which fused nodes report their pre-activation values.
pub const PRE_ACTIVATION_SUFFIX: &str = ":pre";

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn silu(v: f32) -> f32 {
    v * sigmoid(v)
}

fn initializer_f32(g: &ModelGraph, name: &str, value: &TensorValue) -> Result<Vec<f32>, ExecError> {
    let scale = || {
        g.nodes
            .iter()
            .find_map(|n| n.quant.get(name))
            .map(|q| q.scale)
            .ok_or_else(|| ExecError::Input(format!("quantized initializer {name} has no scale")))
    };
    Ok(match &value.data {
        TensorData::Fp32(v) => v.clone(),
        TensorData::Int8(v) => {
            let s = scale()?;
            v.iter().map(|&q| q as f32 * s).collect()
        }
        TensorData::Int32(v) => {
            let s = scale()?;
            v.iter().map(|&q| q as f32 * s).collect()
        }
    })
}

/// Runs the graph; returns graph outputs in declaration order.
pub fn run_fp32(g: &ModelGraph, inputs: &[TensorValue]) -> Result<Vec<TensorValue>, ExecError> {
    run_fp32_observed(g, inputs, &mut |_, _| {})
}

/// Like [`run_fp32`], calling `observe(tensor, values)` for every graph input
/// and node output, plus `<output>:pre` for the pre-activation of fused
/// Conv/Add nodes.
pub fn run_fp32_observed(
    g: &ModelGraph,
    inputs: &[TensorValue],
    observe: &mut dyn FnMut(&str, &[f32]),
) -> Result<Vec<TensorValue>, ExecError> {
    if inputs.len() != g.inputs.len() {
        return Err(ExecError::Input(format!(
            "graph takes {} inputs, got {}",
            g.inputs.len(),
            inputs.len()
        )));
    }
    let mut env: HashMap<String, F32Tensor> = HashMap::new();
    for (spec, v) in g.inputs.iter().zip(inputs) {
        let data = v
            .as_f32()
            .ok_or_else(|| ExecError::Input(format!("input {} must be FP32", spec.name)))?;
        if data.len() != spec.numel() {
            return Err(ExecError::Input(format!(
                "input {} holds {} values, expected {}",
                spec.name,
                data.len(),
                spec.numel()
            )));
        }
        observe(&spec.name, data);
        env.insert(
            spec.name.clone(),
            F32Tensor {
                shape: spec.shape.clone(),
                data: data.to_vec(),
            },
        );
    }
    for (name, v) in &g.initializers {
        env.insert(
            name.clone(),
            F32Tensor {
                shape: v.spec.shape.clone(),
                data: initializer_f32(g, name, v)?,
            },
        );
    }
    for i in g.topological_indices()? {
        let node = &g.nodes[i];
        let ins: Vec<&F32Tensor> = node
            .inputs
            .iter()
            .map(|t| {
                env.get(t)
                    .ok_or_else(|| ExecError::Input(format!("tensor {t} not available for {}", node.id)))
            })
            .collect::<Result<_, _>>()?;
        let (outs, pre) = eval_node(node, &ins)?;
        if let Some(pre) = pre {
            observe(&format!("{}{PRE_ACTIVATION_SUFFIX}", node.outputs[0]), &pre);
        }
        for (name, t) in node.outputs.iter().zip(outs) {
            observe(name, &t.data);
            env.insert(name.clone(), t);
        }
    }
    g.outputs
        .iter()
        .map(|spec| {
            let t = &env[&spec.name];
            Ok(TensorValue::fp32(spec.name.clone(), spec.shape.clone(), t.data.clone())?)
        })
        .collect()
}

type EvalResult = Result<(Vec<F32Tensor>, Option<Vec<f32>>), ExecError>;

pub(crate) fn eval_node(node: &GraphNode, ins: &[&F32Tensor]) -> EvalResult {
    use OpKind::*;
    let shapes: Vec<&[usize]> = ins.iter().map(|t| t.shape.as_slice()).collect();
    let out_shapes = shape::node_output_shapes(node, &shapes)?;
    let single = |data: Vec<f32>| F32Tensor {
        shape: out_shapes[0].clone(),
        data,
    };
    let map = |f: fn(f32) -> f32, v: &[f32]| v.iter().map(|&x| f(x)).collect::<Vec<_>>();
    Ok(match node.kind {
        Conv2D | FusedConvReLU | FusedConvSiLU => {
            let win = shape::conv_window(node)?;
            let group = shape::conv_group(node)?;
            let y = conv_direct(ins[0], ins[1], ins.get(2).copied(), &win, group, &out_shapes[0]);
            match node.kind {
                Conv2D => (vec![single(y)], None),
                FusedConvReLU => (vec![single(map(relu, &y))], Some(y)),
                _ => (vec![single(map(silu, &y))], Some(y)),
            }
        }
        MVM => {
            let (x, w) = (&ins[0].data, ins[1]);
            let (o, k) = (w.shape[0], w.shape[1]);
            let y = (0..o)
                .map(|r| {
                    let row = &w.data[r * k..(r + 1) * k];
                    let s: f32 = row.iter().zip(x).map(|(a, b)| a * b).sum();
                    s + ins.get(2).map_or(0.0, |b| b.data[r])
                })
                .collect();
            (vec![single(y)], None)
        }
        Add | FusedAddReLU => {
            let y: Vec<f32> = ins[0].data.iter().zip(&ins[1].data).map(|(a, b)| a + b).collect();
            if node.kind == Add {
                (vec![single(y)], None)
            } else {
                (vec![single(map(relu, &y))], Some(y))
            }
        }
        Mul => (
            vec![single(ins[0].data.iter().zip(&ins[1].data).map(|(a, b)| a * b).collect())],
            None,
        ),
        ReLU => (vec![single(map(relu, &ins[0].data))], None),
        Sigmoid => (vec![single(map(sigmoid, &ins[0].data))], None),
        SiLU => (vec![single(map(silu, &ins[0].data))], None),
        MaxPool | AvgPool => {
            let win = shape::pool_window(node)?;
            (vec![single(pool_direct(ins[0], &win, node.kind == MaxPool, &out_shapes[0]))], None)
        }
        Concat => {
            let axis = shape::normalize_axis(node, node.attr_int("axis")?, ins[0].shape.len())?;
            let (outer, inner) = outer_inner(&out_shapes[0], axis);
            let mut y = Vec::with_capacity(out_shapes[0].iter().product());
            for o in 0..outer {
                for t in ins {
                    let chunk = t.shape[axis] * inner;
                    y.extend_from_slice(&t.data[o * chunk..(o + 1) * chunk]);
                }
            }
            (vec![single(y)], None)
        }
        Split => {
            let x = ins[0];
            let axis = shape::normalize_axis(node, node.attr_int("axis")?, x.shape.len())?;
            let (outer, inner) = outer_inner(&x.shape, axis);
            let row = x.shape[axis] * inner;
            let mut offset = 0;
            let mut outs = Vec::new();
            for s in out_shapes {
                let n = s[axis];
                let mut data = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let base = o * row + offset * inner;
                    data.extend_from_slice(&x.data[base..base + n * inner]);
                }
                offset += n;
                outs.push(F32Tensor { shape: s, data });
            }
            (outs, None)
        }
        Flatten | Reshape => (vec![single(ins[0].data.clone())], None),
        QuantizeLinear => {
            let s = node.attr_float("scale")? as f32;
            (
                vec![single(ins[0].data.iter().map(|&v| crate::quant::quantize(v, s) as f32).collect())],
                None,
            )
        }
        DequantizeLinear => {
            let s = node.attr_float("scale")? as f32;
            (vec![single(ins[0].data.iter().map(|&v| v * s).collect())], None)
        }
    })
}

fn relu(v: f32) -> f32 {
    v.max(0.0)
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (shape[..axis].iter().product(), shape[axis + 1..].iter().product())
}

fn conv_direct(
    x: &F32Tensor,
    w: &F32Tensor,
    b: Option<&F32Tensor>,
    win: &Window,
    group: usize,
    out_shape: &[usize],
) -> Vec<f32> {
    let (c, h, wd) = (x.shape[1], x.shape[2], x.shape[3]);
    let (o, cg, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let og = o / group;
    let mut y = vec![0f32; o * oh * ow];
    for oc in 0..o {
        let gidx = oc / og;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b.map_or(0.0, |b| b.data[oc]);
                for ci in 0..cg {
                    let ic = gidx * cg + ci;
                    debug_assert!(ic < c);
                    for dy in 0..kh {
                        let iy = (oy * win.strides[0] + dy) as isize - win.pads[0] as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for dx in 0..kw {
                            let ix = (ox * win.strides[1] + dx) as isize - win.pads[1] as isize;
                            if ix < 0 || ix as usize >= wd {
                                continue;
                            }
                            s += x.data[(ic * h + iy as usize) * wd + ix as usize]
                                * w.data[((oc * cg + ci) * kh + dy) * kw + dx];
                        }
                    }
                }
                y[(oc * oh + oy) * ow + ox] = s;
            }
        }
    }
    y
}

fn pool_direct(x: &F32Tensor, win: &Window, max: bool, out_shape: &[usize]) -> Vec<f32> {
    let (c, h, w) = (x.shape[1], x.shape[2], x.shape[3]);
    let (oh, ow) = (out_shape[2], out_shape[3]);
    let mut y = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                let mut s = 0f32;
                for dy in 0..win.kernel[0] {
                    let iy = (oy * win.strides[0] + dy) as isize - win.pads[0] as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for dx in 0..win.kernel[1] {
                        let ix = (ox * win.strides[1] + dx) as isize - win.pads[1] as isize;
                        if ix < 0 || ix as usize >= w {
                            continue;
                        }
                        let v = x.data[(ch * h + iy as usize) * w + ix as usize];
                        m = m.max(v);
                        s += v;
                    }
                }
                y.push(if max { m } else { s / win.area() as f32 });
            }
        }
    }
    y
}

/// Max |v| per observed tensor over a set of runs.
pub fn calibrate_ranges(g: &ModelGraph, samples: &[Vec<TensorValue>]) -> Result<BTreeMap<String, f32>, ExecError> {
    let mut ranges: BTreeMap<String, f32> = BTreeMap::new();
    for s in samples {
        run_fp32_observed(g, s, &mut |name, v| {
            let m = v.iter().fold(0f32, |m, x| m.max(x.abs()));
            let e = ranges.entry(name.to_string()).or_insert(0.0);
            *e = e.max(m);
        })?;
    }
    Ok(ranges)
}
