use serde::{Deserialize, Serialize};

use super::IrError;

/// Element type of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DType {
    Int8,
    Int32,
    Fp32,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::Int8 => 1,
            DType::Int32 | DType::Fp32 => 4,
        }
    }
}

/// Name, shape and element type of a tensor. Shapes are row-major; 4-D
/// activations are NCHW with N = 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, dtype: DType) -> Self {
        Self {
            name: name.into(),
            shape,
            dtype,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_size(&self) -> usize {
        self.numel() * self.dtype.size_bytes()
    }

    pub(crate) fn check_shape(&self) -> Result<(), IrError> {
        if self.shape.is_empty() || self.shape.len() > 4 {
            return Err(IrError::validation(
                &self.name,
                format!("tensor must have 1-4 dims, got {:?}", self.shape),
            ));
        }
        if self.shape.contains(&0) {
            return Err(IrError::validation(
                &self.name,
                format!("zero-sized dimension in {:?}", self.shape),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Int8(Vec<i8>),
    Int32(Vec<i32>),
    Fp32(Vec<f32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::Int8(_) => DType::Int8,
            TensorData::Int32(_) => DType::Int32,
            TensorData::Fp32(_) => DType::Fp32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::Int8(v) => v.len(),
            TensorData::Int32(v) => v.len(),
            TensorData::Fp32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian raw bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            TensorData::Int8(v) => v.iter().map(|&x| x as u8).collect(),
            TensorData::Int32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            TensorData::Fp32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Option<Self> {
        if !bytes.len().is_multiple_of(dtype.size_bytes()) {
            return None;
        }
        Some(match dtype {
            DType::Int8 => TensorData::Int8(bytes.iter().map(|&b| b as i8).collect()),
            DType::Int32 => TensorData::Int32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::Fp32 => TensorData::Fp32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        })
    }
}

/// A materialized tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub spec: TensorSpec,
    pub data: TensorData,
}

impl TensorValue {
    pub fn new(spec: TensorSpec, data: TensorData) -> Result<Self, IrError> {
        spec.check_shape()?;
        if spec.dtype != data.dtype() {
            return Err(IrError::validation(
                &spec.name,
                format!("dtype {:?} does not match data {:?}", spec.dtype, data.dtype()),
            ));
        }
        if spec.numel() != data.len() {
            return Err(IrError::validation(
                &spec.name,
                format!(
                    "buffer holds {} elements but shape {:?} needs {}",
                    data.len(),
                    spec.shape,
                    spec.numel()
                ),
            ));
        }
        Ok(Self { spec, data })
    }

    pub fn fp32(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self, IrError> {
        Self::new(TensorSpec::new(name, shape, DType::Fp32), TensorData::Fp32(data))
    }

    pub fn int8(name: impl Into<String>, shape: Vec<usize>, data: Vec<i8>) -> Result<Self, IrError> {
        Self::new(TensorSpec::new(name, shape, DType::Int8), TensorData::Int8(data))
    }

    pub fn int32(name: impl Into<String>, shape: Vec<usize>, data: Vec<i32>) -> Result<Self, IrError> {
        Self::new(TensorSpec::new(name, shape, DType::Int32), TensorData::Int32(data))
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.spec.shape
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::Fp32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::Int8(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match &self.data {
            TensorData::Int32(v) => Some(v),
            _ => None,
        }
    }
}
