//! On-disk form of a compiled model: `compiled_model.json` plus a binary
//! blob holding INT8 weights and INT32 biases, and the two info files
//! (`fpga_info.json`, `adjacency.json`) consumed by the mapper.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AccelClass, CompileError, CompiledModel, CompiledNode, FpgaInfoRecord, Weights2d};
use crate::model_ir::{Adjacency, GraphNode, IrError, TensorSpec};
use crate::quant::QuantParams;

pub const COMPILED_FILE: &str = "compiled_model.json";
pub const COMPILED_BLOB: &str = "model.bin";
pub const FPGA_INFO_FILE: &str = "fpga_info.json";
pub const ADJACENCY_FILE: &str = "adjacency.json";
const COMPILED_FORMAT: &str = "imce-compiled";

/// Byte range inside the compiled blob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobRef {
    pub offset: u64,
    pub length: u64,
}

impl BlobRef {
    pub fn slice<'a>(&self, blob: &'a [u8]) -> Option<&'a [u8]> {
        let start = usize::try_from(self.offset).ok()?;
        let end = start.checked_add(usize::try_from(self.length).ok()?)?;
        blob.get(start..end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub rows: usize,
    pub cols: usize,
    pub logical_rows: usize,
    pub logical_cols: usize,
    pub blob: BlobRef,
}

/// A [`CompiledNode`] with its tensors replaced by blob references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledNodeRecord {
    pub node: GraphNode,
    pub class: AccelClass,
    pub input_shapes: Vec<Vec<usize>>,
    pub output_shapes: Vec<Vec<usize>>,
    pub in_scales: Vec<QuantParams>,
    pub out_scales: Vec<QuantParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<WeightsRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_scale: Option<QuantParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<BlobRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mid_scale: Option<QuantParams>,
    pub cost_hint_us: f64,
}

impl CompiledNodeRecord {
    /// Appends the node's weights and bias to `blob` and records where.
    pub fn from_node(n: &CompiledNode, blob: &mut Vec<u8>) -> Self {
        let mut push = |bytes: &[u8]| {
            let r = BlobRef {
                offset: blob.len() as u64,
                length: bytes.len() as u64,
            };
            blob.extend_from_slice(bytes);
            r
        };
        let weights = n.weights2d.as_ref().map(|w| WeightsRecord {
            rows: w.rows,
            cols: w.cols,
            logical_rows: w.logical_rows,
            logical_cols: w.logical_cols,
            blob: push(&w.data.iter().map(|&v| v as u8).collect::<Vec<_>>()),
        });
        let bias = n
            .bias
            .as_ref()
            .map(|b| push(&b.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>()));
        Self {
            node: n.node.clone(),
            class: n.class,
            input_shapes: n.input_shapes.clone(),
            output_shapes: n.output_shapes.clone(),
            in_scales: n.in_scales.clone(),
            out_scales: n.out_scales.clone(),
            weights,
            weight_scale: n.weight_scale,
            bias,
            mid_scale: n.mid_scale,
            cost_hint_us: n.cost_hint_us,
        }
    }

    /// Materializes the node, reading tensors from `blob`.
    pub fn to_node(&self, blob: &[u8]) -> Result<CompiledNode, IrError> {
        let bad = |what: &str| IrError::Parse(format!("node {}: {what} outside the weight blob", self.node.id));
        let weights2d = match &self.weights {
            Some(w) => {
                let bytes = w.blob.slice(blob).ok_or_else(|| bad("weights"))?;
                if bytes.len() != w.rows * w.cols {
                    return Err(IrError::Parse(format!(
                        "node {}: weights hold {} bytes, expected {}x{}",
                        self.node.id,
                        bytes.len(),
                        w.rows,
                        w.cols
                    )));
                }
                Some(Weights2d {
                    rows: w.rows,
                    cols: w.cols,
                    logical_rows: w.logical_rows,
                    logical_cols: w.logical_cols,
                    data: bytes.iter().map(|&b| b as i8).collect(),
                })
            }
            None => None,
        };
        let bias = match &self.bias {
            Some(r) => {
                let bytes = r.slice(blob).ok_or_else(|| bad("bias"))?;
                if bytes.len() % 4 != 0 {
                    return Err(bad("ragged bias"));
                }
                Some(
                    bytes
                        .chunks_exact(4)
                        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            None => None,
        };
        Ok(CompiledNode {
            node: self.node.clone(),
            class: self.class,
            input_shapes: self.input_shapes.clone(),
            output_shapes: self.output_shapes.clone(),
            in_scales: self.in_scales.clone(),
            out_scales: self.out_scales.clone(),
            weights2d,
            weight_scale: self.weight_scale,
            bias,
            mid_scale: self.mid_scale,
            cost_hint_us: self.cost_hint_us,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CompiledFile {
    format: String,
    version: u32,
    data_file: String,
    inputs: Vec<TensorSpec>,
    outputs: Vec<TensorSpec>,
    input_scales: Vec<QuantParams>,
    output_scales: Vec<QuantParams>,
    nodes: Vec<CompiledNodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpgaInfoFile {
    pub nodes: Vec<FpgaInfoRecord>,
}

/// Edge list over node ids in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyFile {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
}

impl AdjacencyFile {
    pub fn from_adjacency(a: &Adjacency) -> Self {
        Self {
            nodes: a.ids.clone(),
            edges: a
                .edges()
                .into_iter()
                .map(|(i, j)| (a.ids[i].clone(), a.ids[j].clone()))
                .collect(),
        }
    }
}

/// Adjacency implied by the nodes' activation inputs and outputs.
pub fn adjacency_of(nodes: &[CompiledNode]) -> Adjacency {
    let mut edges = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for (j, b) in nodes.iter().enumerate() {
            if a.node.outputs.iter().any(|o| b.node.inputs.contains(o)) {
                edges.push((i, j));
            }
        }
    }
    Adjacency::from_edges(nodes.iter().map(|n| n.node.id.clone()).collect(), &edges)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CompileError + '_ {
    move |source| {
        CompileError::Ir(IrError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CompileError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CompileError::Ir(IrError::Parse(e.to_string())))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Writes the four compiler artifacts into `dir` (created if missing).
/// Returns the written paths.
pub fn save_compiled(m: &CompiledModel, dir: &Path) -> Result<Vec<PathBuf>, CompileError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut blob = Vec::new();
    let nodes = m.nodes.iter().map(|n| CompiledNodeRecord::from_node(n, &mut blob)).collect();
    let file = CompiledFile {
        format: COMPILED_FORMAT.into(),
        version: 1,
        data_file: COMPILED_BLOB.into(),
        inputs: m.inputs.clone(),
        outputs: m.outputs.clone(),
        input_scales: m.input_scales.clone(),
        output_scales: m.output_scales.clone(),
        nodes,
    };
    let paths: Vec<PathBuf> = [COMPILED_FILE, COMPILED_BLOB, FPGA_INFO_FILE, ADJACENCY_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_json(&paths[0], &file)?;
    fs::write(&paths[1], &blob).map_err(io_err(&paths[1]))?;
    write_json(&paths[2], &FpgaInfoFile { nodes: m.fpga_info() })?;
    write_json(&paths[3], &AdjacencyFile::from_adjacency(&m.adjacency))?;
    Ok(paths)
}

/// Reads a compiled model back from a directory written by [`save_compiled`].
pub fn load_compiled(dir: &Path) -> Result<CompiledModel, CompileError> {
    let path = dir.join(COMPILED_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let file: CompiledFile = serde_json::from_str(&text)
        .map_err(|e| CompileError::Ir(IrError::Parse(format!("{}: {e}", path.display()))))?;
    if file.format != COMPILED_FORMAT || file.version != 1 {
        return Err(CompileError::Ir(IrError::Parse(format!(
            "{}: expected {COMPILED_FORMAT} version 1",
            path.display()
        ))));
    }
    let blob_path = dir.join(&file.data_file);
    let blob = fs::read(&blob_path).map_err(io_err(&blob_path))?;
    let nodes = file
        .nodes
        .iter()
        .map(|r| r.to_node(&blob))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompiledModel {
        adjacency: adjacency_of(&nodes),
        nodes,
        inputs: file.inputs,
        outputs: file.outputs,
        input_scales: file.input_scales,
        output_scales: file.output_scales,
    })
}
