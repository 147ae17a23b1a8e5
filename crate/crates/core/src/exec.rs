//! INT8 execution of compiled nodes, shared by the sequential oracle and
//! the distributed workers so both run identical kernels.

use std::collections::HashMap;

use thiserror::Error;

use crate::compiler::{AccelClass, CompiledModel, CompiledNode};
use crate::kernels::an::{self, AnMatrix, ConvKernel, Epilogue, Im2colPlan};
use crate::kernels::di::{self, DiTensor, PoolKind, PoolSpec};
use crate::kernels::KernelError;
use crate::model_ir::{shape, IrError, OpKind, TensorValue};
use crate::nvm_noise::{self, NoiseModel, ReadNoise};
use crate::quant;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("kernel error at node `{node}`: {source}")]
    Kernel { node: String, source: KernelError },
    #[error("bad input: {0}")]
    Input(String),
    #[error("node `{node}`: {message}")]
    Node { node: String, message: String },
}

#[derive(Debug, Clone)]
enum Prepared {
    Mvm { matrix: AnMatrix, bias: Option<Vec<i32>> },
    Conv(Box<ConvKernel>),
    Add { relu: bool },
    Mul,
    SiLU,
    Sigmoid,
    ReLU,
    Pool(PoolSpec),
    Concat { axis: usize },
    Split { axis: usize, sizes: Vec<usize> },
}

/// A compiled node with its weights programmed (noise applied once) and its
/// kernel parameters resolved.
#[derive(Debug, Clone)]
pub struct NodeExecutor {
    node: CompiledNode,
    prepared: Prepared,
    noise: NoiseModel,
    noise_key: u64,
}

impl NodeExecutor {
    pub fn prepare(n: &CompiledNode, noise: &NoiseModel) -> Result<Self, ExecError> {
        let id = n.node.id.clone();
        let err = |message: String| ExecError::Node {
            node: id.clone(),
            message,
        };
        let kerr = |source: KernelError| ExecError::Kernel {
            node: id.clone(),
            source,
        };
        if n.input_shapes.len() != n.node.inputs.len() || n.in_scales.len() != n.node.inputs.len() {
            return Err(err("input shapes/scales do not match inputs".into()));
        }
        if n.output_shapes.len() != n.node.outputs.len() || n.out_scales.len() != n.node.outputs.len() {
            return Err(err("output shapes/scales do not match outputs".into()));
        }
        let noise_key = nvm_noise::node_key(&n.node.id);
        let in_s = n.in_scales.first().map(|q| q.scale).unwrap_or(1.0);
        let out_s = n.out_scales[0].scale;
        let programmed = || -> Result<AnMatrix, ExecError> {
            let w = n.weights2d.as_ref().ok_or_else(|| err("An node without weights".into()))?;
            let ws = n.weight_scale.ok_or_else(|| err("An node without weight scale".into()))?;
            let m = w.to_an_matrix(ws).map_err(kerr)?;
            Ok(nvm_noise::program_weights(&m, noise, noise_key))
        };
        use OpKind::*;
        let prepared = match n.node.kind {
            MVM => Prepared::Mvm {
                matrix: programmed()?,
                bias: n.bias.clone(),
            },
            Conv2D | FusedConvReLU | FusedConvSiLU => {
                let s = &n.input_shapes[0];
                if s.len() != 4 || s[0] != 1 {
                    return Err(err(format!("conv input must be [1,C,H,W], got {s:?}")));
                }
                let plan = Im2colPlan::new(s[1], s[2], s[3], shape::conv_window(&n.node)?).map_err(kerr)?;
                let epilogue = match n.node.kind {
                    FusedConvReLU => Epilogue::ReLU,
                    FusedConvSiLU => Epilogue::SiLU {
                        mid_scale: n
                            .mid_scale
                            .ok_or_else(|| err("FusedConvSiLU without a pre-activation scale".into()))?
                            .scale,
                    },
                    _ => Epilogue::None,
                };
                let out_channels = n.output_shapes[0][1];
                let k = ConvKernel::new(plan, programmed()?, n.bias.clone(), out_channels, in_s, out_s, epilogue)
                    .map_err(kerr)?;
                Prepared::Conv(Box::new(k))
            }
            Add => Prepared::Add { relu: false },
            FusedAddReLU => Prepared::Add { relu: true },
            Mul => Prepared::Mul,
            SiLU => Prepared::SiLU,
            Sigmoid => Prepared::Sigmoid,
            ReLU => Prepared::ReLU,
            MaxPool | AvgPool => {
                let s = &n.input_shapes[0];
                if s.len() != 4 || s[0] != 1 {
                    return Err(err(format!("pool input must be [1,C,H,W], got {s:?}")));
                }
                Prepared::Pool(PoolSpec {
                    kind: if n.node.kind == MaxPool { PoolKind::Max } else { PoolKind::Avg },
                    window: shape::pool_window(&n.node)?,
                })
            }
            Concat => {
                let rank = n.input_shapes[0].len();
                Prepared::Concat {
                    axis: shape::normalize_axis(&n.node, n.node.attr_int("axis")?, rank)?,
                }
            }
            Split => {
                let rank = n.input_shapes[0].len();
                Prepared::Split {
                    axis: shape::normalize_axis(&n.node, n.node.attr_int("axis")?, rank)?,
                    sizes: shape::split_sizes(&n.node)?,
                }
            }
            Flatten | Reshape | QuantizeLinear | DequantizeLinear => {
                return Err(err(format!("{} is not executable on an accelerator", n.node.kind)))
            }
        };
        let expected = match prepared {
            Prepared::Mvm { .. } | Prepared::Conv(_) => AccelClass::An,
            _ => AccelClass::Di,
        };
        if expected != n.class {
            return Err(err(format!("{} node classified {} but runs on {expected}", n.node.kind, n.class)));
        }
        Ok(Self {
            node: n.clone(),
            prepared,
            noise: *noise,
            noise_key,
        })
    }

    pub fn node(&self) -> &CompiledNode {
        &self.node
    }

    pub fn id(&self) -> &str {
        &self.node.node.id
    }

    /// Expected byte length of each input.
    pub fn input_lens(&self) -> Vec<usize> {
        self.node.input_bytes()
    }

    /// Runs the node on INT8 inputs for request `invocation`.
    pub fn execute(&self, inputs: &[&[i8]], invocation: u64) -> Result<Vec<Vec<i8>>, ExecError> {
        let n = &self.node;
        let expected = self.input_lens();
        if inputs.len() != expected.len() {
            return Err(ExecError::Input(format!(
                "node {} takes {} inputs, got {}",
                n.id(),
                expected.len(),
                inputs.len()
            )));
        }
        for (i, (x, &len)) in inputs.iter().zip(&expected).enumerate() {
            if x.len() != len {
                return Err(ExecError::Input(format!(
                    "node {} input {i} expected {len} bytes, got {}",
                    n.id(),
                    x.len()
                )));
            }
        }
        let kerr = |source: KernelError| ExecError::Kernel {
            node: n.id().to_string(),
            source,
        };
        let s_in: Vec<f32> = n.in_scales.iter().map(|q| q.scale).collect();
        let s_out = n.out_scales[0].scale;
        let noise = ReadNoise {
            model: &self.noise,
            node: self.noise_key,
            invocation,
        };
        let noise = noise.is_active().then_some(noise);
        let out = match &self.prepared {
            Prepared::Mvm { matrix, bias } => {
                let mut x = vec![0i8; matrix.rows()];
                x[..inputs[0].len()].copy_from_slice(inputs[0]);
                let mut y = an::mvm_biased(matrix, &x, bias.as_deref(), s_in[0], s_out, noise).map_err(kerr)?;
                y.truncate(n.output_bytes()[0]);
                vec![y]
            }
            Prepared::Conv(k) => vec![an::conv2d(inputs[0], k, noise).map_err(kerr)?],
            Prepared::Add { relu } => {
                vec![di::add(inputs[0], inputs[1], s_in[0], s_in[1], s_out, *relu).map_err(kerr)?]
            }
            Prepared::Mul => vec![di::mul(inputs[0], inputs[1], s_in[0], s_in[1], s_out).map_err(kerr)?],
            Prepared::SiLU => vec![di::silu(inputs[0], s_in[0], s_out)],
            Prepared::Sigmoid => vec![di::sigmoid(inputs[0], s_in[0], s_out)],
            Prepared::ReLU => vec![di::relu(inputs[0], s_in[0], s_out)],
            Prepared::Pool(spec) => {
                let s = &n.input_shapes[0];
                let (y, _) = di::pool(inputs[0], [s[1], s[2], s[3]], spec, s_in[0], s_out).map_err(kerr)?;
                vec![y]
            }
            Prepared::Concat { axis } => {
                let parts: Vec<DiTensor<'_>> = inputs
                    .iter()
                    .zip(&n.input_shapes)
                    .zip(&s_in)
                    .map(|((d, s), &scale)| DiTensor { data: d, shape: s, scale })
                    .collect();
                vec![di::concat(&parts, *axis, s_out).map_err(kerr)?.0]
            }
            Prepared::Split { axis, sizes } => di::split(inputs[0], &n.input_shapes[0], *axis, sizes)
                .map_err(kerr)?
                .into_iter()
                .map(|(d, _)| d)
                .collect(),
        };
        Ok(out)
    }
}

/// Quantizes FP32 graph inputs with the model's input scales.
pub fn quantize_inputs(m: &CompiledModel, inputs: &[TensorValue]) -> Result<Vec<Vec<i8>>, ExecError> {
    if inputs.len() != m.inputs.len() {
        return Err(ExecError::Input(format!(
            "model takes {} inputs, got {}",
            m.inputs.len(),
            inputs.len()
        )));
    }
    m.inputs
        .iter()
        .zip(inputs)
        .zip(&m.input_scales)
        .map(|((spec, v), q)| {
            if v.spec.numel() != spec.numel() {
                return Err(ExecError::Input(format!(
                    "input {} expected {} elements, got {}",
                    spec.name,
                    spec.numel(),
                    v.spec.numel()
                )));
            }
            match (v.as_f32(), v.as_i8()) {
                (Some(d), _) => Ok(quant::quantize_slice(d, q.scale)),
                (_, Some(d)) => Ok(d.to_vec()),
                _ => Err(ExecError::Input(format!("input {} must be FP32 or INT8", spec.name))),
            }
        })
        .collect()
}

/// Converts INT8 graph outputs back to FP32 tensors.
pub fn dequantize_outputs(m: &CompiledModel, outputs: &[Vec<i8>]) -> Result<Vec<TensorValue>, ExecError> {
    m.outputs
        .iter()
        .zip(outputs)
        .zip(&m.output_scales)
        .map(|((spec, codes), q)| {
            Ok(TensorValue::fp32(
                spec.name.clone(),
                spec.shape.clone(),
                quant::dequantize_slice(codes, q.scale),
            )?)
        })
        .collect()
}

/// Single-threaded execution of a compiled model in topological order.
/// Ground truth for the distributed runtime.
#[derive(Debug, Clone)]
pub struct SequentialInterpreter {
    model: CompiledModel,
    executors: Vec<NodeExecutor>,
}

impl SequentialInterpreter {
    pub fn new(model: CompiledModel, noise: &NoiseModel) -> Result<Self, ExecError> {
        let executors = model
            .nodes
            .iter()
            .map(|n| NodeExecutor::prepare(n, noise))
            .collect::<Result<_, _>>()?;
        Ok(Self { model, executors })
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }

    /// Runs one request on INT8 graph inputs; `seq` keys the read noise.
    pub fn run_codes(&self, inputs: &[Vec<i8>], seq: u64) -> Result<Vec<Vec<i8>>, ExecError> {
        let m = &self.model;
        if inputs.len() != m.inputs.len() {
            return Err(ExecError::Input(format!(
                "model takes {} inputs, got {}",
                m.inputs.len(),
                inputs.len()
            )));
        }
        let mut env: HashMap<&str, Vec<i8>> = HashMap::new();
        for (spec, x) in m.inputs.iter().zip(inputs) {
            if x.len() != spec.numel() {
                return Err(ExecError::Input(format!(
                    "input {} expected {} bytes, got {}",
                    spec.name,
                    spec.numel(),
                    x.len()
                )));
            }
            env.insert(&spec.name, x.clone());
        }
        for ex in &self.executors {
            let node = &ex.node().node;
            let ins: Vec<&[i8]> = node
                .inputs
                .iter()
                .map(|t| {
                    env.get(t.as_str())
                        .map(|v| v.as_slice())
                        .ok_or_else(|| ExecError::Input(format!("tensor {t} not available for {}", node.id)))
                })
                .collect::<Result<_, _>>()?;
            let outs = ex.execute(&ins, seq)?;
            for (name, v) in node.outputs.iter().zip(outs) {
                env.insert(name, v);
            }
        }
        m.outputs
            .iter()
            .map(|s| {
                env.remove(s.name.as_str())
                    .ok_or_else(|| ExecError::Input(format!("graph output {} was not produced", s.name)))
            })
            .collect()
    }

    /// Quantizes FP32 inputs, runs, and dequantizes the outputs.
    pub fn run(&self, inputs: &[TensorValue], seq: u64) -> Result<Vec<TensorValue>, ExecError> {
        let codes = quantize_inputs(&self.model, inputs)?;
        let out = self.run_codes(&codes, seq)?;
        dequantize_outputs(&self.model, &out)
    }
}
