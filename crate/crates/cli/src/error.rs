use std::fmt;

use imce_core::compiler::CompileError;
use imce_core::exec::ExecError;
use imce_core::mapper::MapError;
use imce_core::model_ir::IrError;
use imce_runtime::RuntimeError;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_QUANTIZATION: i32 = 3;
pub const EXIT_MAPPING: i32 = 4;
pub const EXIT_DISTRIBUTED: i32 = 5;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: i32, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }

    pub fn validation(msg: impl fmt::Display) -> Self {
        Self::new(EXIT_VALIDATION, anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            code: self.code,
            error: self.error.context(ctx),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<IrError> for CliError {
    fn from(e: IrError) -> Self {
        Self::new(EXIT_VALIDATION, e)
    }
}

impl From<CompileError> for CliError {
    fn from(e: CompileError) -> Self {
        let code = if e.is_quantization() {
            EXIT_QUANTIZATION
        } else {
            EXIT_VALIDATION
        };
        Self::new(code, e)
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        let code = match e {
            MapError::Capacity { .. } | MapError::Connectivity { .. } => EXIT_MAPPING,
            _ => EXIT_VALIDATION,
        };
        Self::new(code, e)
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        Self::new(EXIT_DISTRIBUTED, e)
    }
}

impl From<ExecError> for CliError {
    fn from(e: ExecError) -> Self {
        Self::new(EXIT_VALIDATION, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_FAILURE, e)
    }
}
