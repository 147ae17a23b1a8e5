//! Distributed execution of mapped models: worker processes emulating the
//! processing boards, the framed wire protocol between them, and the
//! orchestrator that configures a cluster and pipelines requests through it.

pub mod cluster;
pub mod error;
pub mod protocol;
pub mod stats;
pub mod worker;

pub use cluster::{configure_cluster, Cluster, ClusterOptions, InferenceResult, RunTiming};
pub use error::RuntimeError;
pub use protocol::{ComMessage, MsgType};
pub use stats::{BoardStats, StatsReport, StatsSink};
pub use worker::{WorkerOptions, ConfigurePayload};
