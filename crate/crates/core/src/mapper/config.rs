//! Board configuration files and the `.dfl` connectivity description.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BoardInfo, DeploymentPlan, InputBinding, MapError, OutputBinding, Strategy, Transition, Transport};
use crate::compiler::{adjacency_of, CompiledModel, CompiledNode, CompiledNodeRecord, COMPILED_BLOB};
use crate::model_ir::TensorSpec;
use crate::nvm_noise::NoiseModel;
use crate::quant::QuantParams;

pub const TOPOLOGY_FILE: &str = "topology.dfl";
pub const BOARD_CFG_PREFIX: &str = "board_";
const DFL_FORMAT: &str = "imce-dfl";
const BOARD_FORMAT: &str = "imce-board";

/// Global connectivity: boards, S-links with channel ids, graph I/O.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub format: String,
    pub version: u32,
    pub strategy: Strategy,
    pub boards: Vec<BoardInfo>,
    /// Node ids in topological order.
    pub nodes: Vec<String>,
    pub transitions: Vec<Transition>,
    pub graph_inputs: Vec<InputBinding>,
    pub graph_outputs: Vec<OutputBinding>,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<TensorSpec>,
    pub input_scales: Vec<QuantParams>,
    pub output_scales: Vec<QuantParams>,
    pub model_blob: String,
}

impl Topology {
    pub fn s_links(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(|t| t.transport == Transport::Tcp)
    }
}

/// Everything one board needs: its nodes (weights by reference into the
/// model blob), noise settings and link endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardConfig {
    pub format: String,
    pub board: BoardInfo,
    pub noise: NoiseModel,
    pub model_blob: String,
    pub nodes: Vec<CompiledNodeRecord>,
    pub links_in: Vec<Transition>,
    pub links_out: Vec<Transition>,
    pub local: Vec<Transition>,
    pub graph_inputs: Vec<InputBinding>,
    pub graph_outputs: Vec<OutputBinding>,
}

impl BoardConfig {
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(|r| r.node.id.as_str())
    }

    pub fn file_name(board_id: u32) -> String {
        format!("{BOARD_CFG_PREFIX}{board_id}.cfg")
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), MapError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| MapError::Parse(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| MapError::Io(path.to_path_buf(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, MapError> {
    let text = fs::read_to_string(path).map_err(|e| MapError::Io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| MapError::Parse(format!("{}: {e}", path.display())))
}

/// Writes `board_<id>.cfg` for every board, `topology.dfl`, and the weight
/// blob the configs point into. Output is byte-deterministic.
pub fn emit_configs(
    plan: &DeploymentPlan,
    cm: &CompiledModel,
    noise: &NoiseModel,
    dir: &Path,
) -> Result<Vec<PathBuf>, MapError> {
    fs::create_dir_all(dir).map_err(|e| MapError::Io(dir.to_path_buf(), e))?;
    let mut blob = Vec::new();
    let records: Vec<CompiledNodeRecord> = cm.nodes.iter().map(|n| CompiledNodeRecord::from_node(n, &mut blob)).collect();
    let mut written = Vec::new();
    let blob_path = dir.join(COMPILED_BLOB);
    fs::write(&blob_path, &blob).map_err(|e| MapError::Io(blob_path.clone(), e))?;
    written.push(blob_path);

    for b in &plan.boards {
        let id = b.board_id;
        let on_board = |n: &str| plan.assignment.get(n) == Some(&id);
        let cfg = BoardConfig {
            format: BOARD_FORMAT.into(),
            board: b.clone(),
            noise: *noise,
            model_blob: COMPILED_BLOB.into(),
            nodes: records.iter().filter(|r| on_board(&r.node.id)).cloned().collect(),
            links_in: plan
                .transitions
                .iter()
                .filter(|t| t.transport == Transport::Tcp && t.dst_board == id)
                .cloned()
                .collect(),
            links_out: plan
                .transitions
                .iter()
                .filter(|t| t.transport == Transport::Tcp && t.src_board == id)
                .cloned()
                .collect(),
            local: plan
                .transitions
                .iter()
                .filter(|t| t.transport == Transport::Local && t.src_board == id)
                .cloned()
                .collect(),
            graph_inputs: plan.graph_inputs.iter().filter(|g| g.board == id).cloned().collect(),
            graph_outputs: plan.graph_outputs.iter().filter(|g| g.board == id).cloned().collect(),
        };
        let path = dir.join(BoardConfig::file_name(id));
        write_json(&path, &cfg)?;
        written.push(path);
    }

    let topo = Topology {
        format: DFL_FORMAT.into(),
        version: 1,
        strategy: plan.strategy,
        boards: plan.boards.clone(),
        nodes: cm.nodes.iter().map(|n| n.node.id.clone()).collect(),
        transitions: plan.transitions.clone(),
        graph_inputs: plan.graph_inputs.clone(),
        graph_outputs: plan.graph_outputs.clone(),
        inputs: cm.inputs.clone(),
        outputs: cm.outputs.clone(),
        input_scales: cm.input_scales.clone(),
        output_scales: cm.output_scales.clone(),
        model_blob: COMPILED_BLOB.into(),
    };
    let path = dir.join(TOPOLOGY_FILE);
    write_json(&path, &topo)?;
    written.push(path);
    Ok(written)
}

/// A mapped model read back from disk.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub dir: PathBuf,
    pub topology: Topology,
    pub boards: Vec<BoardConfig>,
    pub blob: Vec<u8>,
}

/// Reads `topology.dfl`, every board config it lists and the weight blob.
pub fn load_deployment(dir: &Path) -> Result<Deployment, MapError> {
    let topology: Topology = read_json(&dir.join(TOPOLOGY_FILE))?;
    if topology.format != DFL_FORMAT || topology.version != 1 {
        return Err(MapError::Parse(format!("{}: expected {DFL_FORMAT} version 1", TOPOLOGY_FILE)));
    }
    let mut boards = Vec::new();
    for b in &topology.boards {
        let cfg: BoardConfig = read_json(&dir.join(BoardConfig::file_name(b.board_id)))?;
        if cfg.format != BOARD_FORMAT || cfg.board != *b {
            return Err(MapError::Invalid(format!(
                "{} does not describe board {}",
                BoardConfig::file_name(b.board_id),
                b.board_id
            )));
        }
        boards.push(cfg);
    }
    let blob_path = dir.join(&topology.model_blob);
    let blob = fs::read(&blob_path).map_err(|e| MapError::Io(blob_path, e))?;
    Ok(Deployment {
        dir: dir.to_path_buf(),
        topology,
        boards,
        blob,
    })
}

impl Deployment {
    /// Rebuilds the plan from the per-board node lists.
    pub fn plan(&self) -> DeploymentPlan {
        let assignment: BTreeMap<String, u32> = self
            .boards
            .iter()
            .flat_map(|c| c.node_ids().map(|n| (n.to_string(), c.board.board_id)).collect::<Vec<_>>())
            .collect();
        DeploymentPlan {
            strategy: self.topology.strategy,
            boards: self.topology.boards.clone(),
            assignment,
            transitions: self.topology.transitions.clone(),
            graph_inputs: self.topology.graph_inputs.clone(),
            graph_outputs: self.topology.graph_outputs.clone(),
        }
    }

    /// Boards that host at least one node.
    pub fn active_boards(&self) -> impl Iterator<Item = &BoardConfig> {
        self.boards.iter().filter(|c| !c.nodes.is_empty())
    }

    pub fn noise(&self) -> NoiseModel {
        self.boards.first().map(|c| c.noise).unwrap_or_default()
    }

    /// The compiled model spread over the board configs.
    pub fn compiled_model(&self) -> Result<CompiledModel, MapError> {
        let mut by_id: BTreeMap<&str, CompiledNode> = BTreeMap::new();
        for c in &self.boards {
            for r in &c.nodes {
                let n = r.to_node(&self.blob).map_err(|e| MapError::Parse(e.to_string()))?;
                by_id.insert(&r.node.id, n);
            }
        }
        let nodes = self
            .topology
            .nodes
            .iter()
            .map(|id| {
                by_id
                    .remove(id.as_str())
                    .ok_or_else(|| MapError::Invalid(format!("node {id} is on no board")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompiledModel {
            adjacency: adjacency_of(&nodes),
            nodes,
            inputs: self.topology.inputs.clone(),
            outputs: self.topology.outputs.clone(),
            input_scales: self.topology.input_scales.clone(),
            output_scales: self.topology.output_scales.clone(),
        })
    }
}
