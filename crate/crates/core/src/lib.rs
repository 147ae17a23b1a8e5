//! Emulator core for in-memory-computing accelerator clusters: graph IR,
//! compiler, INT8 kernels, NVM noise, node-to-board mapping and the
//! sequential reference interpreter.

pub mod compiler;
pub mod digits;
pub mod exec;
pub mod kernels;
pub mod mapper;
pub mod model_ir;
pub mod nvm_noise;
pub mod quant;
pub mod reference;
pub mod zoo;

pub use compiler::{compile, AccelClass, CompiledModel, CompiledNode};
pub use exec::SequentialInterpreter;
pub use nvm_noise::NoiseModel;
