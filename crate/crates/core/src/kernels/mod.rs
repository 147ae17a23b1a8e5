//! Emulated accelerator kernels.
//!
//! `an` covers the analog MVM engine (matrix-vector products and im2col
//! convolutions); `di` covers the digital operation set. All kernels take and
//! return INT8 codes under symmetric per-tensor scales.

pub mod an;
pub mod di;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("scale mismatch: {0}")]
    ScaleMismatch(String),
}
