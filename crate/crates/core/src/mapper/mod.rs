//! Nodes-to-boards mapping under per-board F-thread (hosted nodes) and
//! S-thread (inter-board links) limits.

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{emit_configs, load_deployment, BoardConfig, Deployment, Topology, BOARD_CFG_PREFIX, TOPOLOGY_FILE};

use crate::compiler::{AccelClass, CompiledModel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardInfo {
    pub board_id: u32,
    pub class: AccelClass,
    pub address: String,
    pub max_fthreads: usize,
    pub max_sthreads: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HwInfo {
    pub boards: Vec<BoardInfo>,
}

impl HwInfo {
    pub fn validate(&self) -> Result<(), MapError> {
        let mut seen = std::collections::HashSet::new();
        for b in &self.boards {
            if !seen.insert(b.board_id) {
                return Err(MapError::InvalidHw(format!("duplicate board id {}", b.board_id)));
            }
            if b.max_fthreads == 0 || b.max_sthreads == 0 {
                return Err(MapError::InvalidHw(format!("board {} has a zero thread limit", b.board_id)));
            }
        }
        Ok(())
    }

    pub fn board(&self, id: u32) -> Option<&BoardInfo> {
        self.boards.iter().find(|b| b.board_id == id)
    }

    /// `an` An boards followed by `di` Di boards with consecutive ids and
    /// loopback addresses starting at `base_port`.
    pub fn uniform(an: usize, di: usize, fthreads: usize, sthreads: usize, base_port: u16) -> Self {
        let boards = (0..an + di)
            .map(|i| BoardInfo {
                board_id: i as u32,
                class: if i < an { AccelClass::An } else { AccelClass::Di },
                address: format!("127.0.0.1:{}", base_port as usize + i),
                max_fthreads: fthreads,
                max_sthreads: sthreads,
            })
            .collect();
        Self { boards }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path).map_err(|e| MapError::Io(path.to_path_buf(), e))?;
        let hw: HwInfo =
            serde_json::from_str(&text).map_err(|e| MapError::Parse(format!("{}: {e}", path.display())))?;
        hw.validate()?;
        Ok(hw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    LoadBalance,
    MinCut,
    RoundRobin,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::LoadBalance, Strategy::MinCut, Strategy::RoundRobin];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::LoadBalance => "loadbalance",
            Strategy::MinCut => "mincut",
            Strategy::RoundRobin => "roundrobin",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "loadbalance" => Ok(Strategy::LoadBalance),
            "mincut" => Ok(Strategy::MinCut),
            "roundrobin" => Ok(Strategy::RoundRobin),
            _ => Err(format!("unknown strategy `{s}` (loadbalance, mincut, roundrobin)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("capacity error: {class} nodes need {needed} F-threads, boards offer {available} (short by {shortfall})")]
    Capacity {
        class: AccelClass,
        needed: usize,
        available: usize,
        shortfall: usize,
    },
    #[error("connectivity error: board {board} needs {needed} S-threads, limit is {limit}")]
    Connectivity { board: u32, needed: usize, limit: usize },
    #[error("invalid hardware description: {0}")]
    InvalidHw(String),
    #[error("invalid deployment: {0}")]
    Invalid(String),
    #[error("I/O error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// Placement problem: nodes in topological order and tensor-level edges
/// between them (parallel edges allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct MapProblem {
    pub ids: Vec<String>,
    pub classes: Vec<AccelClass>,
    pub costs: Vec<f64>,
    pub edges: Vec<(usize, usize)>,
}

impl MapProblem {
    pub fn from_model(cm: &CompiledModel) -> Self {
        let mut edges = Vec::new();
        for t in transitions_of(cm) {
            edges.push((t.0, t.2));
        }
        Self {
            ids: cm.nodes.iter().map(|n| n.node.id.clone()).collect(),
            classes: cm.nodes.iter().map(|n| n.class).collect(),
            costs: cm.nodes.iter().map(|n| n.cost_hint_us).collect(),
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Edges whose endpoints sit on different boards.
    pub fn cut(&self, assign: &[usize]) -> usize {
        self.edges.iter().filter(|&&(a, b)| assign[a] != assign[b]).count()
    }

    /// Inter-board edges incident to each board.
    pub fn sthreads(&self, assign: &[usize], n_boards: usize) -> Vec<usize> {
        let mut s = vec![0; n_boards];
        for &(a, b) in &self.edges {
            if assign[a] != assign[b] {
                s[assign[a]] += 1;
                s[assign[b]] += 1;
            }
        }
        s
    }
}

/// (src node index, src output, dst node index, dst slot, tensor) for every
/// tensor edge between nodes, ordered by source then destination.
fn transitions_of(cm: &CompiledModel) -> Vec<(usize, usize, usize, usize, String)> {
    let mut out = Vec::new();
    for (i, src) in cm.nodes.iter().enumerate() {
        for (oi, t) in src.node.outputs.iter().enumerate() {
            for (j, dst) in cm.nodes.iter().enumerate() {
                for (slot, inp) in dst.node.inputs.iter().enumerate() {
                    if inp == t {
                        out.push((i, oi, j, slot, t.clone()));
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    /// Both endpoints on one board: in-memory hand-off.
    Local,
    /// Dedicated stream connection between two boards.
    Tcp,
}

/// One graph transition (tensor edge) with its channel id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub channel: u32,
    pub tensor: String,
    pub bytes: usize,
    pub src_node: String,
    pub src_output: usize,
    pub src_board: u32,
    pub dst_node: String,
    pub dst_slot: usize,
    pub dst_board: u32,
    pub transport: Transport,
}

/// A graph input delivered to a node slot; channel = input index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBinding {
    pub index: usize,
    pub tensor: String,
    pub node: String,
    pub slot: usize,
    pub board: u32,
}

/// A node output returned to the orchestrator; channel = output index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputBinding {
    pub index: usize,
    pub tensor: String,
    pub node: String,
    pub output: usize,
    pub board: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPlan {
    pub strategy: Strategy,
    pub boards: Vec<BoardInfo>,
    /// node id -> board id
    pub assignment: BTreeMap<String, u32>,
    pub transitions: Vec<Transition>,
    pub graph_inputs: Vec<InputBinding>,
    pub graph_outputs: Vec<OutputBinding>,
}

impl DeploymentPlan {
    pub fn board_nodes(&self, board: u32) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &b)| b == board)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn fthreads(&self, board: u32) -> usize {
        self.assignment.values().filter(|&&b| b == board).count()
    }

    /// S-links (inter-board transitions) with an endpoint on `board`.
    pub fn sthreads(&self, board: u32) -> usize {
        self.transitions
            .iter()
            .filter(|t| t.transport == Transport::Tcp && (t.src_board == board || t.dst_board == board))
            .count()
    }

    pub fn inter_board_edges(&self) -> usize {
        self.transitions.iter().filter(|t| t.transport == Transport::Tcp).count()
    }

    /// Boards hosting at least one node.
    pub fn used_boards(&self) -> Vec<u32> {
        let mut v: Vec<u32> = self.assignment.values().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Human-readable per-board utilization table.
    pub fn utilization_table(&self) -> String {
        let mut s = format!("{:>6} {:>5} {:>10} {:>10}  nodes\n", "board", "class", "F-threads", "S-threads");
        for b in &self.boards {
            let nodes = self.board_nodes(b.board_id);
            s += &format!(
                "{:>6} {:>5} {:>6}/{:<3} {:>6}/{:<3}  {}\n",
                b.board_id,
                b.class.to_string(),
                nodes.len(),
                b.max_fthreads,
                self.sthreads(b.board_id),
                b.max_sthreads,
                nodes.join(",")
            );
        }
        s += &format!("inter-board edges: {}\n", self.inter_board_edges());
        s
    }
}

/// Assigns every compiled node to a board of its class.
pub fn map_nodes(cm: &CompiledModel, hw: &HwInfo, strategy: Strategy) -> Result<DeploymentPlan, MapError> {
    hw.validate()?;
    let problem = MapProblem::from_model(cm);
    let assign = solve(&problem, hw, strategy)?;
    Ok(build_plan(cm, hw, strategy, &assign))
}

fn build_plan(cm: &CompiledModel, hw: &HwInfo, strategy: Strategy, assign: &[usize]) -> DeploymentPlan {
    let board_of = |i: usize| hw.boards[assign[i]].board_id;
    let assignment = cm
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.node.id.clone(), board_of(i)))
        .collect();
    let transitions = transitions_of(cm)
        .into_iter()
        .enumerate()
        .map(|(c, (i, oi, j, slot, tensor))| {
            let (sb, db) = (board_of(i), board_of(j));
            Transition {
                channel: c as u32,
                bytes: cm.nodes[i].output_bytes()[oi],
                tensor,
                src_node: cm.nodes[i].node.id.clone(),
                src_output: oi,
                src_board: sb,
                dst_node: cm.nodes[j].node.id.clone(),
                dst_slot: slot,
                dst_board: db,
                transport: if sb == db { Transport::Local } else { Transport::Tcp },
            }
        })
        .collect();
    let mut graph_inputs = Vec::new();
    for (index, spec) in cm.inputs.iter().enumerate() {
        for (j, n) in cm.nodes.iter().enumerate() {
            for (slot, t) in n.node.inputs.iter().enumerate() {
                if *t == spec.name {
                    graph_inputs.push(InputBinding {
                        index,
                        tensor: spec.name.clone(),
                        node: n.node.id.clone(),
                        slot,
                        board: board_of(j),
                    });
                }
            }
        }
    }
    let mut graph_outputs = Vec::new();
    for (index, spec) in cm.outputs.iter().enumerate() {
        if let Some((i, oi)) = cm.nodes.iter().enumerate().find_map(|(i, n)| {
            n.node.outputs.iter().position(|o| *o == spec.name).map(|oi| (i, oi))
        }) {
            graph_outputs.push(OutputBinding {
                index,
                tensor: spec.name.clone(),
                node: cm.nodes[i].node.id.clone(),
                output: oi,
                board: board_of(i),
            });
        }
    }
    DeploymentPlan {
        strategy,
        boards: hw.boards.clone(),
        assignment,
        transitions,
        graph_inputs,
        graph_outputs,
    }
}

fn check_capacity(p: &MapProblem, hw: &HwInfo) -> Result<(), MapError> {
    for class in [AccelClass::An, AccelClass::Di] {
        let needed = p.classes.iter().filter(|&&c| c == class).count();
        let available: usize = hw.boards.iter().filter(|b| b.class == class).map(|b| b.max_fthreads).sum();
        if needed > available {
            return Err(MapError::Capacity {
                class,
                needed,
                available,
                shortfall: needed - available,
            });
        }
    }
    Ok(())
}

/// Board indices (into `hw.boards`) sorted by board id.
fn boards_by_id(hw: &HwInfo) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..hw.boards.len()).collect();
    idx.sort_by_key(|&i| hw.boards[i].board_id);
    idx
}

/// Returns one board index per node.
pub fn solve(p: &MapProblem, hw: &HwInfo, strategy: Strategy) -> Result<Vec<usize>, MapError> {
    check_capacity(p, hw)?;
    let mut assign = match strategy {
        Strategy::LoadBalance | Strategy::MinCut => load_balance(p, hw),
        Strategy::RoundRobin => round_robin(p, hw),
    };
    let caps: Vec<usize> = hw.boards.iter().map(|b| b.max_sthreads).collect();
    if strategy == Strategy::MinCut || overflow(p, &assign, &caps) > 0 {
        improve(p, hw, &mut assign);
    }
    let s = p.sthreads(&assign, hw.boards.len());
    if let Some((b, (&need, &cap))) = s.iter().zip(&caps).enumerate().find(|(_, (n, c))| n > c) {
        return Err(MapError::Connectivity {
            board: hw.boards[b].board_id,
            needed: need,
            limit: cap,
        });
    }
    Ok(assign)
}

/// Greedy bin packing: heaviest node first onto the least-loaded
/// compatible board with a free F-thread.
fn load_balance(p: &MapProblem, hw: &HwInfo) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p.costs[b].total_cmp(&p.costs[a]).then_with(|| p.ids[a].cmp(&p.ids[b])));
    let by_id = boards_by_id(hw);
    let mut load = vec![0f64; hw.boards.len()];
    let mut used = vec![0usize; hw.boards.len()];
    let mut assign = vec![usize::MAX; p.len()];
    for n in order {
        let best = by_id
            .iter()
            .copied()
            .filter(|&b| hw.boards[b].class == p.classes[n] && used[b] < hw.boards[b].max_fthreads)
            .min_by(|&a, &b| load[a].total_cmp(&load[b]).then(used[a].cmp(&used[b])))
            .expect("capacity checked");
        assign[n] = best;
        load[best] += p.costs[n];
        used[best] += 1;
    }
    assign
}

/// Topological order striped across compatible boards by id.
fn round_robin(p: &MapProblem, hw: &HwInfo) -> Vec<usize> {
    let by_id = boards_by_id(hw);
    let mut used = vec![0usize; hw.boards.len()];
    let mut cursor: BTreeMap<AccelClass, usize> = BTreeMap::new();
    let mut assign = vec![usize::MAX; p.len()];
    for (n, slot) in assign.iter_mut().enumerate() {
        let ring: Vec<usize> = by_id.iter().copied().filter(|&b| hw.boards[b].class == p.classes[n]).collect();
        let c = cursor.entry(p.classes[n]).or_insert(0);
        for k in 0..ring.len() {
            let b = ring[(*c + k) % ring.len()];
            if used[b] < hw.boards[b].max_fthreads {
                *slot = b;
                used[b] += 1;
                *c = (*c + k + 1) % ring.len();
                break;
            }
        }
    }
    assign
}

fn overflow(p: &MapProblem, assign: &[usize], caps: &[usize]) -> usize {
    p.sthreads(assign, caps.len())
        .iter()
        .zip(caps)
        .map(|(&s, &c)| s.saturating_sub(c))
        .sum()
}

/// Best score so far and the moves that reach it.
type Candidate = Option<((usize, usize), Vec<(usize, usize)>)>;

/// Hill climbing over single-node moves and pairwise swaps, minimizing
/// (S-thread overflow, cut size) lexicographically. Best improvement per
/// step; ties resolve to the first candidate in (node, board) order.
fn improve(p: &MapProblem, hw: &HwInfo, assign: &mut [usize]) {
    let caps: Vec<usize> = hw.boards.iter().map(|b| b.max_sthreads).collect();
    let score = |a: &[usize]| (overflow(p, a, &caps), p.cut(a));
    let mut used = vec![0usize; hw.boards.len()];
    for &b in assign.iter() {
        used[b] += 1;
    }
    let mut current = score(assign);
    loop {
        let mut best: Candidate = None;
        let consider = |cand: Vec<(usize, usize)>, assign: &mut [usize], best: &mut Candidate| {
            let saved: Vec<(usize, usize)> = cand.iter().map(|&(n, _)| (n, assign[n])).collect();
            for &(n, b) in &cand {
                assign[n] = b;
            }
            let s = score(assign);
            for &(n, b) in &saved {
                assign[n] = b;
            }
            let target = best.as_ref().map_or(current, |(bs, _)| *bs);
            if s < target {
                *best = Some((s, cand));
            }
        };
        for n in 0..p.len() {
            for (b, board) in hw.boards.iter().enumerate() {
                if b != assign[n] && board.class == p.classes[n] && used[b] < board.max_fthreads {
                    consider(vec![(n, b)], assign, &mut best);
                }
            }
        }
        for n in 0..p.len() {
            for m in n + 1..p.len() {
                if p.classes[n] == p.classes[m] && assign[n] != assign[m] {
                    let (bn, bm) = (assign[n], assign[m]);
                    consider(vec![(n, bm), (m, bn)], assign, &mut best);
                }
            }
        }
        match best {
            Some((s, moves)) => {
                for (n, b) in moves {
                    used[assign[n]] -= 1;
                    assign[n] = b;
                    used[b] += 1;
                }
                current = s;
            }
            None => break,
        }
    }
}

/// Independent plan checker: every node placed once on a board of its
/// class, F-thread and S-thread caps respected, and the transitions match
/// the model's tensor edges exactly once with unique channels.
pub fn validate_plan(plan: &DeploymentPlan, cm: &CompiledModel) -> Result<(), Vec<String>> {
    let mut errs = Vec::new();
    let boards: BTreeMap<u32, &BoardInfo> = plan.boards.iter().map(|b| (b.board_id, b)).collect();
    if plan.assignment.len() != cm.nodes.len() {
        errs.push(format!("{} of {} nodes assigned", plan.assignment.len(), cm.nodes.len()));
    }
    let mut fth: BTreeMap<u32, usize> = BTreeMap::new();
    for n in &cm.nodes {
        match plan.assignment.get(&n.node.id).and_then(|b| boards.get(b).map(|bi| (b, bi))) {
            None => errs.push(format!("node {} unassigned or on an unknown board", n.node.id)),
            Some((b, bi)) => {
                if bi.class != n.class {
                    errs.push(format!("node {} ({}) on {} board {b}", n.node.id, n.class, bi.class));
                }
                *fth.entry(*b).or_default() += 1;
            }
        }
    }
    let mut sth: BTreeMap<u32, usize> = BTreeMap::new();
    let mut seen_edges = std::collections::BTreeSet::new();
    let mut channels = std::collections::BTreeSet::new();
    for t in &plan.transitions {
        if !channels.insert(t.channel) {
            errs.push(format!("duplicate channel {}", t.channel));
        }
        let (sb, db) = (plan.assignment.get(&t.src_node), plan.assignment.get(&t.dst_node));
        if sb != Some(&t.src_board) || db != Some(&t.dst_board) {
            errs.push(format!("transition {} has stale board endpoints", t.channel));
        }
        let inter = t.src_board != t.dst_board;
        if inter != (t.transport == Transport::Tcp) {
            errs.push(format!("transition {} has the wrong transport", t.channel));
        }
        if inter {
            *sth.entry(t.src_board).or_default() += 1;
            *sth.entry(t.dst_board).or_default() += 1;
        }
        if !seen_edges.insert((t.src_node.clone(), t.tensor.clone(), t.dst_node.clone(), t.dst_slot)) {
            errs.push(format!("transition {} listed twice", t.channel));
        }
    }
    let mut expected = std::collections::BTreeSet::new();
    for src in &cm.nodes {
        for o in &src.node.outputs {
            for dst in &cm.nodes {
                for (slot, i) in dst.node.inputs.iter().enumerate() {
                    if i == o {
                        expected.insert((src.node.id.clone(), o.clone(), dst.node.id.clone(), slot));
                    }
                }
            }
        }
    }
    if expected != seen_edges {
        errs.push(format!(
            "transitions cover {} edges, model has {}",
            seen_edges.len(),
            expected.len()
        ));
    }
    for (b, bi) in &boards {
        let f = fth.get(b).copied().unwrap_or(0);
        if f > bi.max_fthreads {
            errs.push(format!("board {b} hosts {f} nodes, limit {}", bi.max_fthreads));
        }
        let s = sth.get(b).copied().unwrap_or(0);
        if s > bi.max_sthreads {
            errs.push(format!("board {b} needs {s} S-threads, limit {}", bi.max_sthreads));
        }
    }
    if errs.is_empty() {
        Ok(())
    } else {
        Err(errs)
    }
}
