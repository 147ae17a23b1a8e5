//! Counters kept by every worker and the sink that spills them to disk,
//! one file per board.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const STATS_DIR_ENV: &str = "IMCE_STATS_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub node: String,
    pub invocations: u64,
    pub kernel_us: f64,
    pub max_queue_depth: usize,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

/// Traffic on one transition or graph I/O channel. Byte counts include
/// frame headers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub channel: u32,
    pub frames: u64,
    pub bytes: u64,
}

impl LinkStats {
    pub fn record(&mut self, frame_len: usize) {
        self.frames += 1;
        self.bytes += frame_len as u64;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoardStats {
    pub board: u32,
    pub role: String,
    pub nodes: Vec<NodeStats>,
    pub links_out: Vec<LinkStats>,
    pub links_in: Vec<LinkStats>,
    pub infer_in: LinkStats,
    pub results_out: LinkStats,
}

impl BoardStats {
    /// Copy with wall-clock and scheduling-dependent fields zeroed, for
    /// reproducible reports.
    pub fn without_timing(&self) -> Self {
        let mut s = self.clone();
        for n in &mut s.nodes {
            n.kernel_us = 0.0;
            n.max_queue_depth = 0;
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub boards: Vec<BoardStats>,
    /// Boards that did not answer.
    pub missing: Vec<u32>,
}

impl StatsReport {
    pub fn node(&self, id: &str) -> Option<&NodeStats> {
        self.boards.iter().flat_map(|b| &b.nodes).find(|n| n.node == id)
    }

    pub fn link_out(&self, channel: u32) -> Option<&LinkStats> {
        self.boards.iter().flat_map(|b| &b.links_out).find(|l| l.channel == channel)
    }

    pub fn link_in(&self, channel: u32) -> Option<&LinkStats> {
        self.boards.iter().flat_map(|b| &b.links_in).find(|l| l.channel == channel)
    }
}

/// Per-board spill directory.
#[derive(Debug, Clone)]
pub struct StatsSink {
    dir: PathBuf,
}

impl StatsSink {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var_os(STATS_DIR_ENV).map(Self::new)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn file_for(&self, board: u32) -> PathBuf {
        self.dir.join(format!("board_{board}.stats.json"))
    }

    pub fn write(&self, report: &StatsReport) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir)?;
        report
            .boards
            .iter()
            .map(|b| {
                let path = self.file_for(b.board);
                let text = serde_json::to_string_pretty(b).map_err(std::io::Error::other)?;
                std::fs::write(&path, text + "\n")?;
                Ok(path)
            })
            .collect()
    }
}
