//! Graph intermediate representation, model file format and traversal.

mod graph;
mod io;
mod op;
pub mod shape;
mod tensor;

use std::path::PathBuf;

use thiserror::Error;

pub use graph::{Adjacency, GraphNode, ModelGraph, Producer};
pub use io::{load_model, load_tensors, save_model, save_tensors, Sample, TensorRecord, TensorSet, MODEL_FORMAT};
pub use op::{Arity, AttrValue, OpKind};
pub use shape::infer_shapes;
pub use tensor::{DType, TensorData, TensorSpec, TensorValue};

#[derive(Debug, Error)]
pub enum IrError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error at `{location}`: {message}")]
    Validation { location: String, message: String },
    #[error("cycle detected through node `{0}`")]
    Cycle(String),
    #[error("shape error at node `{node}`: {message}")]
    Shape { node: String, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IrError {
    pub fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        IrError::Validation {
            location: location.into(),
            message: message.into(),
        }
    }
}
