//! Attribute decoding and static shape inference.

use std::collections::BTreeMap;

use super::graph::{GraphNode, ModelGraph};
use super::op::OpKind;
use super::IrError;

/// Spatial window parameters shared by convolutions and pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kernel: [usize; 2],
    pub strides: [usize; 2],
    /// top, left, bottom, right
    pub pads: [usize; 4],
}

impl Window {
    pub fn out_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + self.pads[0] + self.pads[2];
        let pw = w + self.pads[1] + self.pads[3];
        if ph < self.kernel[0] || pw < self.kernel[1] {
            return None;
        }
        Some((
            (ph - self.kernel[0]) / self.strides[0] + 1,
            (pw - self.kernel[1]) / self.strides[1] + 1,
        ))
    }

    pub fn area(&self) -> usize {
        self.kernel[0] * self.kernel[1]
    }
}

fn pair(node: &GraphNode, key: &str, v: &[i64]) -> Result<[usize; 2], IrError> {
    match v {
        [a, b] if *a >= 1 && *b >= 1 => Ok([*a as usize, *b as usize]),
        [a] if *a >= 1 => Ok([*a as usize, *a as usize]),
        _ => Err(IrError::validation(
            &node.id,
            format!("`{key}` must hold two positive integers, got {v:?}"),
        )),
    }
}

fn pads(node: &GraphNode, v: &[i64]) -> Result<[usize; 4], IrError> {
    if v.iter().any(|&p| p < 0) {
        return Err(IrError::validation(&node.id, format!("negative pads {v:?}")));
    }
    let u: Vec<usize> = v.iter().map(|&p| p as usize).collect();
    match u.as_slice() {
        [] => Ok([0; 4]),
        [p] => Ok([*p; 4]),
        [ph, pw] => Ok([*ph, *pw, *ph, *pw]),
        [t, l, b, r] => Ok([*t, *l, *b, *r]),
        _ => Err(IrError::validation(&node.id, format!("`pads` must have 1, 2 or 4 entries, got {v:?}"))),
    }
}

/// Window of a Conv-class node.
pub fn conv_window(node: &GraphNode) -> Result<Window, IrError> {
    let kernel = pair(node, "kernel_shape", &node.attr_ints("kernel_shape")?)?;
    let strides = pair(node, "strides", &node.attr_ints("strides")?)?;
    let pads = pads(node, &node.attr_ints("pads")?)?;
    Ok(Window { kernel, strides, pads })
}

pub fn conv_group(node: &GraphNode) -> Result<usize, IrError> {
    match node.attrs.get("group") {
        None => Ok(1),
        Some(_) => {
            let g = node.attr_int("group")?;
            if g < 1 {
                return Err(IrError::validation(&node.id, "`group` must be >= 1"));
            }
            Ok(g as usize)
        }
    }
}

/// Window of a pooling node; strides default to the kernel, pads to zero.
pub fn pool_window(node: &GraphNode) -> Result<Window, IrError> {
    let kernel = pair(node, "kernel_shape", &node.attr_ints("kernel_shape")?)?;
    let strides = match node.attrs.get("strides") {
        Some(_) => pair(node, "strides", &node.attr_ints("strides")?)?,
        None => kernel,
    };
    let pads = pads(node, &node.attr_ints_or("pads", &[])?)?;
    if pads[0] >= kernel[0] || pads[2] >= kernel[0] || pads[1] >= kernel[1] || pads[3] >= kernel[1] {
        return Err(IrError::validation(&node.id, "pool padding must be smaller than the window"));
    }
    Ok(Window { kernel, strides, pads })
}

pub fn normalize_axis(node: &GraphNode, axis: i64, rank: usize) -> Result<usize, IrError> {
    let a = if axis < 0 { axis + rank as i64 } else { axis };
    if a < 0 || a as usize >= rank {
        return Err(IrError::validation(
            &node.id,
            format!("axis {axis} out of range for rank {rank}"),
        ));
    }
    Ok(a as usize)
}

pub fn split_sizes(node: &GraphNode) -> Result<Vec<usize>, IrError> {
    let sizes = node.attr_ints("split_sizes")?;
    if sizes.len() != node.outputs.len() || sizes.iter().any(|&s| s < 1) {
        return Err(IrError::validation(
            &node.id,
            format!(
                "`split_sizes` {sizes:?} must list one positive size per output ({})",
                node.outputs.len()
            ),
        ));
    }
    Ok(sizes.into_iter().map(|s| s as usize).collect())
}

/// Type-checks the attributes a kind relies on.
pub(crate) fn check_attrs(node: &GraphNode) -> Result<(), IrError> {
    use OpKind::*;
    match node.kind {
        Conv2D | FusedConvReLU | FusedConvSiLU => {
            conv_window(node)?;
            conv_group(node)?;
        }
        MaxPool | AvgPool => {
            pool_window(node)?;
        }
        Concat => {
            node.attr_int("axis")?;
        }
        Split => {
            node.attr_int("axis")?;
            split_sizes(node)?;
        }
        Reshape => {
            let s = node.attr_ints("shape")?;
            if s.is_empty() || s.iter().any(|&d| d == 0 || d < -1) || s.iter().filter(|&&d| d == -1).count() > 1 {
                return Err(IrError::validation(&node.id, format!("invalid reshape target {s:?}")));
            }
        }
        QuantizeLinear | DequantizeLinear => {
            let s = node.attr_float("scale")?;
            if !(s > 0.0 && s.is_finite()) {
                return Err(IrError::validation(&node.id, "`scale` must be positive and finite"));
            }
        }
        Flatten
            if node.attrs.contains_key("axis") => {
                node.attr_int("axis")?;
            }
        _ => {}
    }
    Ok(())
}

fn shape_err(node: &GraphNode, msg: String) -> IrError {
    IrError::Shape {
        node: node.id.clone(),
        message: msg,
    }
}

/// Output shapes of one node given its input shapes.
pub fn node_output_shapes(node: &GraphNode, ins: &[&[usize]]) -> Result<Vec<Vec<usize>>, IrError> {
    use OpKind::*;
    let x = ins[0];
    match node.kind {
        Conv2D | FusedConvReLU | FusedConvSiLU => {
            let w = ins[1];
            if x.len() != 4 || x[0] != 1 {
                return Err(shape_err(node, format!("conv input must be [1,C,H,W], got {x:?}")));
            }
            if w.len() != 4 {
                return Err(shape_err(node, format!("conv weights must be 4-D, got {w:?}")));
            }
            let win = conv_window(node)?;
            let group = conv_group(node)?;
            if [w[2], w[3]] != win.kernel {
                return Err(shape_err(
                    node,
                    format!("weights {w:?} disagree with kernel_shape {:?}", win.kernel),
                ));
            }
            if !x[1].is_multiple_of(group) || !w[0].is_multiple_of(group) || w[1] * group != x[1] {
                return Err(shape_err(
                    node,
                    format!("channels: input {} weights {:?} group {group}", x[1], w),
                ));
            }
            if let Some(b) = ins.get(2) {
                if b.iter().product::<usize>() != w[0] {
                    return Err(shape_err(node, format!("bias {b:?} does not match {} outputs", w[0])));
                }
            }
            let (oh, ow) = win
                .out_dims(x[2], x[3])
                .ok_or_else(|| shape_err(node, format!("kernel larger than padded input {x:?}")))?;
            Ok(vec![vec![1, w[0], oh, ow]])
        }
        MVM => {
            let w = ins[1];
            if w.len() != 2 {
                return Err(shape_err(node, format!("MVM weights must be [out, in], got {w:?}")));
            }
            let len: usize = x.iter().product();
            if len != w[1] {
                return Err(shape_err(
                    node,
                    format!("MVM input holds {len} elements, weights expect {}", w[1]),
                ));
            }
            if let Some(b) = ins.get(2) {
                if b.iter().product::<usize>() != w[0] {
                    return Err(shape_err(node, format!("bias {b:?} does not match {} outputs", w[0])));
                }
            }
            Ok(vec![vec![1, w[0]]])
        }
        Add | FusedAddReLU | Mul => {
            if ins[0] != ins[1] {
                return Err(shape_err(
                    node,
                    format!("operand shapes differ: {:?} vs {:?}", ins[0], ins[1]),
                ));
            }
            Ok(vec![x.to_vec()])
        }
        ReLU | Sigmoid | SiLU | QuantizeLinear | DequantizeLinear => Ok(vec![x.to_vec()]),
        MaxPool | AvgPool => {
            if x.len() != 4 || x[0] != 1 {
                return Err(shape_err(node, format!("pool input must be [1,C,H,W], got {x:?}")));
            }
            let win = pool_window(node)?;
            let (oh, ow) = win
                .out_dims(x[2], x[3])
                .ok_or_else(|| shape_err(node, format!("window larger than input {x:?}")))?;
            Ok(vec![vec![1, x[1], oh, ow]])
        }
        Concat => {
            let axis = normalize_axis(node, node.attr_int("axis")?, x.len())?;
            let mut out = x.to_vec();
            out[axis] = 0;
            for s in ins {
                if s.len() != x.len()
                    || s.iter().zip(x).enumerate().any(|(d, (a, b))| d != axis && a != b)
                {
                    return Err(shape_err(node, format!("cannot concat {s:?} with {x:?} on axis {axis}")));
                }
                out[axis] += s[axis];
            }
            Ok(vec![out])
        }
        Split => {
            let axis = normalize_axis(node, node.attr_int("axis")?, x.len())?;
            let sizes = split_sizes(node)?;
            if sizes.iter().sum::<usize>() != x[axis] {
                return Err(shape_err(
                    node,
                    format!("split sizes {sizes:?} do not sum to dim {}", x[axis]),
                ));
            }
            Ok(sizes
                .iter()
                .map(|&s| {
                    let mut o = x.to_vec();
                    o[axis] = s;
                    o
                })
                .collect())
        }
        Flatten => {
            let axis = if node.attrs.contains_key("axis") {
                node.attr_int("axis")?
            } else {
                1
            };
            let axis = if axis < 0 { axis + x.len() as i64 } else { axis };
            if axis < 0 || axis as usize > x.len() {
                return Err(shape_err(node, format!("flatten axis out of range for {x:?}")));
            }
            let axis = axis as usize;
            let outer: usize = x[..axis].iter().product();
            let inner: usize = x[axis..].iter().product();
            Ok(vec![vec![outer, inner]])
        }
        Reshape => {
            let target = node.attr_ints("shape")?;
            let total: usize = x.iter().product();
            let known: usize = target.iter().filter(|&&d| d > 0).map(|&d| d as usize).product();
            let mut out: Vec<usize> = Vec::with_capacity(target.len());
            for &d in &target {
                if d == -1 {
                    if known == 0 || !total.is_multiple_of(known) {
                        return Err(shape_err(node, format!("cannot reshape {x:?} to {target:?}")));
                    }
                    out.push(total / known);
                } else {
                    out.push(d as usize);
                }
            }
            if out.iter().product::<usize>() != total {
                return Err(shape_err(node, format!("cannot reshape {x:?} to {target:?}")));
            }
            Ok(vec![out])
        }
    }
}

/// Shapes of every tensor in the graph.
pub fn infer_shapes(g: &ModelGraph) -> Result<BTreeMap<String, Vec<usize>>, IrError> {
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for s in &g.inputs {
        shapes.insert(s.name.clone(), s.shape.clone());
    }
    for (name, v) in &g.initializers {
        shapes.insert(name.clone(), v.spec.shape.clone());
    }
    for i in g.topological_indices()? {
        let node = &g.nodes[i];
        let ins: Vec<&[usize]> = node
            .inputs
            .iter()
            .map(|t| {
                shapes
                    .get(t)
                    .map(|s| s.as_slice())
                    .ok_or_else(|| IrError::validation(t, format!("node {} consumes undefined tensor {t}", node.id)))
            })
            .collect::<Result<_, _>>()?;
        let outs = node_output_shapes(node, &ins)?;
        for (t, s) in node.outputs.iter().zip(outs) {
            shapes.insert(t.clone(), s);
        }
    }
    for o in &g.outputs {
        let s = &shapes[&o.name];
        if s.iter().product::<usize>() != o.numel() {
            return Err(IrError::validation(
                &o.name,
                format!("graph output declared {:?} but computed {:?}", o.shape, s),
            ));
        }
    }
    Ok(shapes)
}
