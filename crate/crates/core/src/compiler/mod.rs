//! Model compiler: graph optimization, fusion, static INT8 quantization and
//! weight postprocessing into the accelerator's 2-D form.

mod artifacts;
mod fuse;
mod optimize;
mod quantize;
mod weights;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use artifacts::{
    adjacency_of, load_compiled, save_compiled, BlobRef, CompiledNodeRecord, FpgaInfoFile, AdjacencyFile, WeightsRecord,
    ADJACENCY_FILE, COMPILED_BLOB, COMPILED_FILE, FPGA_INFO_FILE,
};
pub use fuse::fuse;
pub use optimize::optimize;
pub use quantize::{quantize, CalibrationSet, QuantizeOptions, Quantized};
pub use weights::{avgpool_weights, reshape_weights, Weights2d};

use crate::exec::ExecError;
use crate::kernels::an::{self, AnDims, AnFunction};
use crate::kernels::di::{self, DiFunction};
use crate::model_ir::{shape, Adjacency, AttrValue, GraphNode, IrError, ModelGraph, OpKind, TensorSpec};
use crate::quant::QuantParams;
use crate::reference::PRE_ACTIVATION_SUFFIX;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("calibration failed: {0}")]
    Exec(#[from] ExecError),
    #[error("quantization error: {0}")]
    Calibration(String),
    #[error("degenerate range: tensor `{0}` is identically zero over calibration")]
    DegenerateRange(String),
    #[error("size error at node `{node}`: {message}")]
    Size { node: String, message: String },
    #[error("node `{node}` ({kind}) cannot be compiled: {reason}")]
    Unsupported { node: String, kind: OpKind, reason: String },
}

impl CompileError {
    /// Errors raised while deriving or applying quantization parameters.
    pub fn is_quantization(&self) -> bool {
        matches!(
            self,
            CompileError::Exec(_) | CompileError::Calibration(_) | CompileError::DegenerateRange(_)
        )
    }
}

/// Processing-unit class a node runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AccelClass {
    An,
    Di,
}

impl fmt::Display for AccelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AccelClass::An => "An",
            AccelClass::Di => "Di",
        })
    }
}

/// A node ready for an accelerator. `node.inputs` lists activation inputs
/// only; weights and bias live in `weights2d` / `bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledNode {
    pub node: GraphNode,
    pub class: AccelClass,
    pub input_shapes: Vec<Vec<usize>>,
    pub output_shapes: Vec<Vec<usize>>,
    pub in_scales: Vec<QuantParams>,
    pub out_scales: Vec<QuantParams>,
    pub weights2d: Option<Weights2d>,
    pub weight_scale: Option<QuantParams>,
    pub bias: Option<Vec<i32>>,
    /// Pre-activation scale of FusedConvSiLU.
    pub mid_scale: Option<QuantParams>,
    pub cost_hint_us: f64,
}

impl CompiledNode {
    pub fn id(&self) -> &str {
        &self.node.id
    }

    pub fn kind(&self) -> OpKind {
        self.node.kind
    }

    pub fn input_bytes(&self) -> Vec<usize> {
        self.input_shapes.iter().map(|s| s.iter().product()).collect()
    }

    pub fn output_bytes(&self) -> Vec<usize> {
        self.output_shapes.iter().map(|s| s.iter().product()).collect()
    }
}

/// One line of the FPGA info list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpgaInfoRecord {
    pub id: String,
    pub class: AccelClass,
    pub op: OpKind,
    pub in_bytes: Vec<usize>,
    pub out_bytes: Vec<usize>,
    pub cost_hint_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    /// Topological order.
    pub nodes: Vec<CompiledNode>,
    pub adjacency: Adjacency,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
    pub input_scales: Vec<QuantParams>,
    pub output_scales: Vec<QuantParams>,
}

impl CompiledModel {
    pub fn node(&self, id: &str) -> Option<&CompiledNode> {
        self.nodes.iter().find(|n| n.node.id == id)
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.node.id == id)
    }

    pub fn fpga_info(&self) -> Vec<FpgaInfoRecord> {
        self.nodes
            .iter()
            .map(|n| FpgaInfoRecord {
                id: n.node.id.clone(),
                class: n.class,
                op: n.node.kind,
                in_bytes: n.input_bytes(),
                out_bytes: n.output_bytes(),
                cost_hint_us: n.cost_hint_us,
            })
            .collect()
    }

    pub fn count_class(&self, class: AccelClass) -> usize {
        self.nodes.iter().filter(|n| n.class == class).count()
    }

    /// Longest path through the graph weighted by cost hints, in microseconds.
    pub fn critical_path_us(&self) -> f64 {
        let n = self.nodes.len();
        let mut finish = vec![0f64; n];
        for j in 0..n {
            let start = (0..j)
                .filter(|&i| self.adjacency.get(i, j))
                .map(|i| finish[i])
                .fold(0.0, f64::max);
            finish[j] = start + self.nodes[j].cost_hint_us;
        }
        finish.into_iter().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CompileOptions {
    pub quantize: QuantizeOptions,
    /// Where average pooling runs; on An it is lowered to a depthwise conv.
    pub avgpool_on: AccelClass,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self {
            quantize: QuantizeOptions::default(),
            avgpool_on: AccelClass::An,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassCount {
    pub pass: String,
    pub nodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub passes: Vec<PassCount>,
    pub degenerate_tensors: Vec<String>,
}

/// optimize -> fuse -> quantize -> reshape/classify.
pub fn compile(g: &ModelGraph, cal: &CalibrationSet) -> Result<CompiledModel, CompileError> {
    compile_with(g, cal, &CompileOptions::default()).map(|(m, _)| m)
}

pub fn compile_with(
    g: &ModelGraph,
    cal: &CalibrationSet,
    opts: &CompileOptions,
) -> Result<(CompiledModel, CompileReport), CompileError> {
    g.validate()?;
    let mut report = CompileReport::default();
    let mut count = |pass: &str, g: &ModelGraph| {
        report.passes.push(PassCount {
            pass: pass.to_string(),
            nodes: g.nodes.len(),
        })
    };
    count("input", g);
    let g = optimize(g);
    count("optimize", &g);
    let g = fuse(&g);
    count("fuse", &g);
    let q = quantize(&g, cal, opts.quantize)?;
    count("quantize", &q.graph);
    report.degenerate_tensors = q.degenerate;
    let model = lower(&q.graph, opts)?;
    report.passes.push(PassCount {
        pass: "compile".into(),
        nodes: model.nodes.len(),
    });
    Ok((model, report))
}

fn quant_of(node: &GraphNode, tensor: &str) -> Result<QuantParams, CompileError> {
    node.quant
        .get(tensor)
        .copied()
        .ok_or_else(|| CompileError::Calibration(format!("node {} has no scale for tensor {tensor}", node.id)))
}

/// Turns a quantized, fused graph into accelerator nodes.
fn lower(g: &ModelGraph, opts: &CompileOptions) -> Result<CompiledModel, CompileError> {
    g.validate()?;
    let shapes = shape::infer_shapes(g)?;
    let producers = g.producers();
    for o in &g.outputs {
        if !matches!(producers.get(o.name.as_str()), Some(crate::model_ir::Producer::Node(..))) {
            return Err(CompileError::Unsupported {
                node: o.name.clone(),
                kind: OpKind::Reshape,
                reason: "graph outputs must be produced by a node".into(),
            });
        }
    }
    let order = g.topological_indices()?;
    let mut nodes = Vec::with_capacity(order.len());
    for &i in &order {
        nodes.push(lower_node(g, &g.nodes[i], &shapes, opts)?);
    }

    let pick_scale = |tensor: &str| -> Result<QuantParams, CompileError> {
        g.nodes
            .iter()
            .find_map(|n| n.quant.get(tensor).copied())
            .ok_or_else(|| CompileError::Calibration(format!("no scale for graph tensor {tensor}")))
    };
    let input_scales = g.inputs.iter().map(|s| pick_scale(&s.name)).collect::<Result<_, _>>()?;
    let output_scales = g.outputs.iter().map(|s| pick_scale(&s.name)).collect::<Result<_, _>>()?;
    Ok(CompiledModel {
        adjacency: artifacts::adjacency_of(&nodes),
        nodes,
        inputs: g.inputs.clone(),
        outputs: g.outputs.clone(),
        input_scales,
        output_scales,
    })
}

fn lower_node(
    g: &ModelGraph,
    node: &GraphNode,
    shapes: &std::collections::BTreeMap<String, Vec<usize>>,
    opts: &CompileOptions,
) -> Result<CompiledNode, CompileError> {
    use OpKind::*;
    let unsupported = |reason: &str| CompileError::Unsupported {
        node: node.id.clone(),
        kind: node.kind,
        reason: reason.to_string(),
    };
    let act_inputs: Vec<String> = if node.kind.has_weights() {
        vec![node.inputs[0].clone()]
    } else {
        node.inputs.clone()
    };
    if let Some(t) = act_inputs.iter().find(|t| g.initializers.contains_key(*t)) {
        return Err(unsupported(&format!("constant activation operand `{t}`")));
    }
    let input_shapes: Vec<Vec<usize>> = act_inputs.iter().map(|t| shapes[t].clone()).collect();
    let output_shapes: Vec<Vec<usize>> = node.outputs.iter().map(|t| shapes[t].clone()).collect();
    let in_scales = act_inputs.iter().map(|t| quant_of(node, t)).collect::<Result<Vec<_>, _>>()?;
    let out_scales = node.outputs.iter().map(|t| quant_of(node, t)).collect::<Result<Vec<_>, _>>()?;

    let mut compiled_node = node.clone();
    compiled_node.inputs = act_inputs;
    let mut out = CompiledNode {
        node: compiled_node,
        class: AccelClass::Di,
        input_shapes,
        output_shapes,
        in_scales,
        out_scales,
        weights2d: None,
        weight_scale: None,
        bias: None,
        mid_scale: None,
        cost_hint_us: 0.0,
    };
    let in_bytes: usize = out.input_bytes().iter().sum();
    let out_bytes: usize = out.output_bytes().iter().sum();

    match node.kind {
        Conv2D | FusedConvReLU | FusedConvSiLU | MVM => {
            out.class = AccelClass::An;
            let wname = &node.inputs[1];
            let w = g
                .initializers
                .get(wname)
                .ok_or_else(|| unsupported("weights must be an initializer"))?;
            let m = reshape_weights(node, w)?;
            out.weight_scale = Some(quant_of(node, wname)?);
            if let Some(bname) = node.inputs.get(2) {
                let b = g
                    .initializers
                    .get(bname)
                    .and_then(|b| b.as_i32())
                    .ok_or_else(|| unsupported("bias must be an INT32 initializer"))?;
                out.bias = Some(b.to_vec());
            }
            if node.kind == FusedConvSiLU {
                out.mid_scale = Some(quant_of(node, &format!("{}{PRE_ACTIVATION_SUFFIX}", node.outputs[0]))?);
            }
            out.cost_hint_us = if node.kind == MVM {
                an::cost_model(AnFunction::Mvm, AnDims { rows: m.cols, cols: m.rows, mvms: 1 })
            } else {
                let s = &out.output_shapes[0];
                an::cost_model(AnFunction::Conv, AnDims { rows: m.cols, cols: m.rows, mvms: s[2] * s[3] })
            };
            out.weights2d = Some(m);
        }
        AvgPool if opts.avgpool_on == AccelClass::An => {
            out.class = AccelClass::An;
            let win = shape::pool_window(node)?;
            let channels = out.input_shapes[0][1];
            let (m, wq) = avgpool_weights(node, channels, win.kernel)?;
            let s = &out.output_shapes[0];
            out.cost_hint_us =
                an::cost_model(AnFunction::Conv, AnDims { rows: m.cols, cols: m.rows, mvms: s[2] * s[3] });
            let n = &mut out.node;
            n.kind = Conv2D;
            n.attrs.insert("strides".into(), AttrValue::Ints(win.strides.iter().map(|&v| v as i64).collect()));
            n.attrs.insert("pads".into(), AttrValue::Ints(win.pads.iter().map(|&v| v as i64).collect()));
            n.attrs.insert("group".into(), AttrValue::Int(channels as i64));
            n.attrs.insert("lowered_from".into(), AttrValue::Str("AvgPool".into()));
            out.weights2d = Some(m);
            out.weight_scale = Some(wq);
        }
        AvgPool => out.cost_hint_us = di::cost_model_di(DiFunction::AvgPool, in_bytes),
        MaxPool => out.cost_hint_us = di::cost_model_di(DiFunction::MaxPool, in_bytes),
        Add | FusedAddReLU => out.cost_hint_us = di::cost_model_di(DiFunction::Add, out_bytes),
        SiLU => out.cost_hint_us = di::cost_model_di(DiFunction::Silu, out_bytes),
        Concat => out.cost_hint_us = di::cost_model_di(DiFunction::Concat, out_bytes),
        Split => out.cost_hint_us = di::cost_model_di(DiFunction::Split, in_bytes),
        ReLU | Sigmoid | Mul => out.cost_hint_us = di::cost_model_di(DiFunction::Elementwise, out_bytes),
        Flatten | Reshape | QuantizeLinear | DequantizeLinear => {
            return Err(unsupported("no accelerator implements this operation"));
        }
    }
    Ok(out)
}

/// Kinds that may appear in a compiled model.
pub fn supported_kinds() -> HashSet<OpKind> {
    OpKind::ALL
        .into_iter()
        .filter(|k| {
            !matches!(
                k,
                OpKind::Flatten | OpKind::Reshape | OpKind::QuantizeLinear | OpKind::DequantizeLinear
            )
        })
        .collect()
}
