use thiserror::Error;

use crate::protocol::ProtocolError;
use imce_core::exec::ExecError;
use imce_core::mapper::MapError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("boards unreachable: {}", .0.join(", "))]
    Unreachable(Vec<String>),
    #[error("board {board} rejected its configuration: {message}")]
    Config { board: u32, message: String },
    #[error("distributed error on board {board} at seq {seq}: {message}")]
    Distributed { board: u32, seq: u64, message: String },
    #[error("timed out waiting for {0}")]
    Timeout(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Deployment(#[from] MapError),
}
