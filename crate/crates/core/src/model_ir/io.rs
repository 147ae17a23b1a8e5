use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::{GraphNode, ModelGraph};
use super::tensor::{DType, TensorData, TensorSpec, TensorValue};
use super::IrError;

pub const MODEL_FORMAT: &str = "imce-model";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    data_file: String,
    inputs: Vec<TensorSpec>,
    outputs: Vec<TensorSpec>,
    initializers: Vec<InitializerRecord>,
    nodes: Vec<GraphNode>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InitializerRecord {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
    length: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IrError + '_ {
    move |source| IrError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sidecar_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("bin")
}

/// Reads `model.json` and its sidecar blob, then validates the graph.
pub fn load_model(path: &Path) -> Result<ModelGraph, IrError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| IrError::Parse(format!("{}: {e}", path.display())))?;
    if file.format != MODEL_FORMAT {
        return Err(IrError::Parse(format!(
            "{}: expected format `{MODEL_FORMAT}`, found `{}`",
            path.display(),
            file.format
        )));
    }
    if file.version != 1 {
        return Err(IrError::Parse(format!("unsupported model version {}", file.version)));
    }
    let blob_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&file.data_file);
    let blob = if file.initializers.is_empty() {
        Vec::new()
    } else {
        fs::read(&blob_path).map_err(io_err(&blob_path))?
    };
    let mut initializers = BTreeMap::new();
    for rec in file.initializers {
        let start = rec.offset as usize;
        let end = start
            .checked_add(rec.length as usize)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| {
                IrError::Parse(format!(
                    "initializer {} range {}+{} exceeds blob of {} bytes",
                    rec.name,
                    rec.offset,
                    rec.length,
                    blob.len()
                ))
            })?;
        let data = TensorData::from_le_bytes(rec.dtype, &blob[start..end])
            .ok_or_else(|| IrError::Parse(format!("initializer {} has a ragged byte length", rec.name)))?;
        let value = TensorValue::new(TensorSpec::new(rec.name.clone(), rec.shape, rec.dtype), data)?;
        if initializers.insert(rec.name.clone(), value).is_some() {
            return Err(IrError::validation(&rec.name, "tensor has more than one producer"));
        }
    }
    let g = ModelGraph {
        nodes: file.nodes,
        initializers,
        inputs: file.inputs,
        outputs: file.outputs,
    };
    g.validate()?;
    Ok(g)
}

/// Writes `path` (JSON) and `path.with_extension("bin")` (initializer data).
pub fn save_model(g: &ModelGraph, path: &Path) -> Result<(), IrError> {
    let blob_path = sidecar_path(path);
    let mut blob = Vec::new();
    let mut records = Vec::new();
    for (name, value) in &g.initializers {
        let bytes = value.data.to_le_bytes();
        records.push(InitializerRecord {
            name: name.clone(),
            shape: value.spec.shape.clone(),
            dtype: value.spec.dtype,
            offset: blob.len() as u64,
            length: bytes.len() as u64,
        });
        blob.extend_from_slice(&bytes);
    }
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: 1,
        data_file: blob_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model.bin".into()),
        inputs: g.inputs.clone(),
        outputs: g.outputs.clone(),
        initializers: records,
        nodes: g.nodes.clone(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| IrError::Parse(e.to_string()))?;
    fs::write(path, text).map_err(io_err(path))?;
    fs::write(&blob_path, blob).map_err(io_err(&blob_path))?;
    Ok(())
}

pub const TENSORS_FORMAT: &str = "imce-tensors";

/// One FP32 tensor inline in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// One request: a value per graph input, optionally labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub inputs: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

impl Sample {
    pub fn new(inputs: &[TensorValue], label: Option<usize>) -> Result<Self, IrError> {
        let inputs = inputs
            .iter()
            .map(|v| {
                let data = v
                    .as_f32()
                    .ok_or_else(|| IrError::Parse(format!("tensor {} is not FP32", v.spec.name)))?;
                Ok(TensorRecord {
                    name: v.spec.name.clone(),
                    shape: v.spec.shape.clone(),
                    data: data.to_vec(),
                })
            })
            .collect::<Result<_, IrError>>()?;
        Ok(Self { inputs, label })
    }

    pub fn values(&self) -> Result<Vec<TensorValue>, IrError> {
        self.inputs
            .iter()
            .map(|r| TensorValue::fp32(r.name.clone(), r.shape.clone(), r.data.clone()))
            .collect()
    }
}

/// Input or calibration samples (`*.json`, format `imce-tensors`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSet {
    pub format: String,
    pub version: u32,
    pub samples: Vec<Sample>,
}

impl TensorSet {
    pub fn new(samples: Vec<Sample>) -> Self {
        Self {
            format: TENSORS_FORMAT.into(),
            version: 1,
            samples,
        }
    }

    pub fn from_values(values: &[Vec<TensorValue>], labels: Option<&[usize]>) -> Result<Self, IrError> {
        let samples = values
            .iter()
            .enumerate()
            .map(|(i, v)| Sample::new(v, labels.map(|l| l[i])))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(samples))
    }

    pub fn values(&self) -> Result<Vec<Vec<TensorValue>>, IrError> {
        self.samples.iter().map(Sample::values).collect()
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

pub fn load_tensors(path: &Path) -> Result<TensorSet, IrError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let set: TensorSet =
        serde_json::from_str(&text).map_err(|e| IrError::Parse(format!("{}: {e}", path.display())))?;
    if set.format != TENSORS_FORMAT || set.version != 1 {
        return Err(IrError::Parse(format!(
            "{}: expected format `{TENSORS_FORMAT}` version 1",
            path.display()
        )));
    }
    set.values()?;
    Ok(set)
}

pub fn save_tensors(set: &TensorSet, path: &Path) -> Result<(), IrError> {
    let text = serde_json::to_string(set).map_err(|e| IrError::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}
