//! Orchestrator side: configures every board of a deployment, streams
//! requests through the pipeline and gathers statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::RuntimeError;
use crate::protocol::{
    ComMessage, Hello, MsgType, ProtocolError, CONFIGURE_CONNECT, CONFIGURE_LOAD, SHUTDOWN_EXIT, SHUTDOWN_RESET,
    VERSION,
};
use crate::stats::{BoardStats, StatsReport, StatsSink};
use crate::worker::{rebase_node, ConfigurePayload};
use imce_core::exec::{dequantize_outputs, quantize_inputs};
use imce_core::mapper::Deployment;
use imce_core::model_ir::TensorValue;
use imce_core::CompiledModel;

#[derive(Debug, Clone)]
pub struct ClusterOptions {
    /// Per-board limit for connecting and for each configuration reply.
    pub timeout: Duration,
    /// Longest silence tolerated while requests are in flight.
    pub run_timeout: Duration,
    /// See [`ConfigurePayload::pace_factor`].
    pub pace_factor: f64,
    /// Board id -> address, overriding the deployment's addresses.
    pub addresses: BTreeMap<u32, String>,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            run_timeout: Duration::from_secs(60),
            pace_factor: 0.0,
            addresses: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub seq: u64,
    pub outputs: Vec<TensorValue>,
    /// Raw INT8 codes of the outputs.
    pub codes: Vec<Vec<i8>>,
    pub wall_latency_us: f64,
    /// Sum of cost-model estimates along the critical path.
    pub simulated_latency_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub requests: usize,
    pub window: usize,
    pub wall_s: f64,
    pub throughput_per_s: f64,
    pub mean_latency_us: f64,
}

enum Event {
    Msg(u32, ComMessage),
    Closed(u32, String),
}

struct BoardLink {
    id: u32,
    writer: BufWriter<TcpStream>,
}

/// A configured, ready cluster.
pub struct Cluster {
    model: CompiledModel,
    boards: Vec<BoardLink>,
    /// (board, graph input index) pairs that receive Infer messages.
    input_routes: Vec<(u32, usize)>,
    events: Receiver<Event>,
    next_seq: u64,
    run_timeout: Duration,
    simulated_latency_us: f64,
}

fn connect_with_retry(addr: &str, deadline: Instant) -> Result<TcpStream, String> {
    let mut last = String::from("timed out");
    while Instant::now() < deadline {
        let sa = match addr.to_socket_addrs().map(|mut a| a.next()) {
            Ok(Some(sa)) => sa,
            Ok(None) => return Err(format!("cannot resolve {addr}")),
            Err(e) => return Err(e.to_string()),
        };
        let left = deadline.saturating_duration_since(Instant::now()).max(Duration::from_millis(1));
        match TcpStream::connect_timeout(&sa, left) {
            Ok(s) => return Ok(s),
            Err(e) => {
                last = e.to_string();
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
    Err(last)
}

/// Opens one configuration connection per active board, loads configs
/// and weights, then has every board open its S-links.
pub fn configure_cluster(dep: &Deployment, opts: &ClusterOptions) -> Result<Cluster, RuntimeError> {
    let model = dep.compiled_model()?;
    let addr_of = |id: u32, default: &str| opts.addresses.get(&id).cloned().unwrap_or_else(|| default.to_string());
    let active: Vec<_> = dep.active_boards().collect();

    // connect to every board in parallel, each with its own deadline, and
    // report all failures at once
    let hello_one = |id: u32, addr: &str, class: imce_core::AccelClass| {
        let deadline = Instant::now() + opts.timeout;
        connect_with_retry(addr, deadline).and_then(|mut s| {
            s.set_nodelay(true).map_err(|e| e.to_string())?;
            s.set_read_timeout(Some(opts.timeout)).map_err(|e| e.to_string())?;
            ComMessage::json(MsgType::Hello, 0, 0, &Hello::Control { version: VERSION })
                .write_to(&mut s)
                .map_err(|e| e.to_string())?;
            let reply = ComMessage::read_from(&mut s).map_err(|e| e.to_string())?;
            match reply.parse_json::<Hello>() {
                Ok(Hello::Worker { version, role }) if version == VERSION => {
                    if !role.eq_ignore_ascii_case(&class.to_string()) {
                        return Err(format!("worker has role {role}, board {id} needs {class}"));
                    }
                }
                _ => return Err(format!("unexpected reply {:?}: {}", reply.kind, reply.text())),
            }
            s.set_read_timeout(None).map_err(|e| e.to_string())?;
            Ok(s)
        })
    };
    let attempts: Vec<(u32, String, Result<TcpStream, String>)> = thread::scope(|scope| {
        let handles: Vec<_> = active
            .iter()
            .map(|cfg| {
                let id = cfg.board.board_id;
                let addr = addr_of(id, &cfg.board.address);
                let class = cfg.board.class;
                let hello_one = &hello_one;
                scope.spawn(move || {
                    let r = hello_one(id, &addr, class);
                    (id, addr, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("connect thread")).collect()
    });
    let mut streams = Vec::new();
    let mut unreachable = Vec::new();
    for (id, addr, r) in attempts {
        match r {
            Ok(s) => streams.push((id, s)),
            Err(e) => unreachable.push(format!("board {id} at {addr} ({e})")),
        }
    }
    let (tx, events) = unbounded();
    let mut boards = Vec::new();
    for (id, s) in streams {
        let reader = s.try_clone()?;
        let tx = tx.clone();
        thread::spawn(move || {
            let mut r = BufReader::new(reader);
            loop {
                match ComMessage::read_from(&mut r) {
                    Ok(m) => {
                        if tx.send(Event::Msg(id, m)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let why = match e {
                            ProtocolError::Closed => "connection closed".to_string(),
                            e => e.to_string(),
                        };
                        let _ = tx.send(Event::Closed(id, why));
                        break;
                    }
                }
            }
        });
        boards.push(BoardLink {
            id,
            writer: BufWriter::new(s),
        });
    }
    let input_routes: BTreeSet<(u32, usize)> = dep
        .topology
        .graph_inputs
        .iter()
        .map(|g| (g.board, g.index))
        .collect();
    let mut cluster = Cluster {
        simulated_latency_us: model.critical_path_us(),
        model,
        boards,
        input_routes: input_routes.into_iter().collect(),
        events,
        next_seq: 0,
        run_timeout: opts.run_timeout,
    };
    if !unreachable.is_empty() {
        cluster.reset();
        return Err(RuntimeError::Unreachable(unreachable));
    }
    if let Err(e) = cluster.load(dep, opts, &addr_of) {
        cluster.reset();
        return Err(e);
    }
    info!("cluster ready: {} boards, {} S-links", cluster.boards.len(), dep.topology.s_links().count());
    Ok(cluster)
}

impl Cluster {
    fn send(&mut self, i: usize, m: &ComMessage) -> Result<(), RuntimeError> {
        let b = &mut self.boards[i];
        m.write_to(&mut b.writer).map_err(|e| RuntimeError::Distributed {
            board: b.id,
            seq: m.seq,
            message: e.to_string(),
        })
    }

    fn board_pos(&self, id: u32) -> usize {
        self.boards.iter().position(|b| b.id == id).expect("known board")
    }

    fn load(
        &mut self,
        dep: &Deployment,
        opts: &ClusterOptions,
        addr_of: &dyn Fn(u32, &str) -> String,
    ) -> Result<(), RuntimeError> {
        let peers: BTreeMap<u32, String> = dep
            .topology
            .boards
            .iter()
            .map(|b| (b.board_id, addr_of(b.board_id, &b.address)))
            .collect();
        let mut expected: BTreeMap<u32, usize> = BTreeMap::new();
        for i in 0..self.boards.len() {
            let id = self.boards[i].id;
            let cfg = dep.boards.iter().find(|c| c.board.board_id == id).expect("active board");
            let mut cfg = cfg.clone();
            let mut blobs = Vec::new();
            for r in &mut cfg.nodes {
                let (rebased, bytes) = rebase_node(r, &dep.blob).ok_or_else(|| RuntimeError::Config {
                    board: id,
                    message: format!("node {} points outside the weight blob", r.node.id),
                })?;
                *r = rebased;
                blobs.push(bytes);
            }
            let linked: BTreeMap<u32, String> = cfg
                .links_out
                .iter()
                .map(|t| (t.dst_board, peers[&t.dst_board].clone()))
                .collect();
            let payload = ConfigurePayload {
                config: cfg,
                peers: linked,
                pace_factor: opts.pace_factor,
            };
            self.send(i, &ComMessage::json(MsgType::Configure, CONFIGURE_LOAD, 0, &payload))?;
            for (k, bytes) in blobs.into_iter().enumerate() {
                self.send(i, &ComMessage::new(MsgType::Weights, k as u32, k as u64, bytes))?;
            }
            expected.insert(id, 1 + payload.config.nodes.len());
        }
        self.await_acks(expected, opts.timeout, "Configure/Weights acks")?;
        let mut expected = BTreeMap::new();
        for i in 0..self.boards.len() {
            self.send(i, &ComMessage::new(MsgType::Configure, CONFIGURE_CONNECT, 0, Vec::new()))?;
            expected.insert(self.boards[i].id, 1);
        }
        self.await_acks(expected, opts.timeout, "S-link setup")
    }

    fn await_acks(&mut self, mut left: BTreeMap<u32, usize>, timeout: Duration, what: &str) -> Result<(), RuntimeError> {
        left.retain(|_, n| *n > 0);
        while !left.is_empty() {
            match self.events.recv_timeout(timeout) {
                Ok(Event::Msg(b, m)) => match m.kind {
                    MsgType::Ack => {
                        if let Some(n) = left.get_mut(&b) {
                            *n -= 1;
                            if *n == 0 {
                                left.remove(&b);
                            }
                        }
                    }
                    MsgType::Error => {
                        return Err(RuntimeError::Config {
                            board: b,
                            message: m.text(),
                        })
                    }
                    k => debug!("ignoring {k:?} from board {b} during setup"),
                },
                Ok(Event::Closed(b, why)) => {
                    return Err(RuntimeError::Config { board: b, message: why });
                }
                Err(_) => {
                    let ids: Vec<String> = left.keys().map(|b| b.to_string()).collect();
                    return Err(RuntimeError::Timeout(format!("{what} from boards {}", ids.join(", "))));
                }
            }
        }
        Ok(())
    }

    pub fn model(&self) -> &CompiledModel {
        &self.model
    }

    pub fn board_ids(&self) -> Vec<u32> {
        self.boards.iter().map(|b| b.id).collect()
    }

    /// Sequence number the next request will carry.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn run_inference(
        &mut self,
        inputs: &[Vec<TensorValue>],
        window: usize,
    ) -> Result<(Vec<InferenceResult>, RunTiming), RuntimeError> {
        let mut out = Vec::with_capacity(inputs.len());
        let timing = self.run_inference_with(inputs, window, |r| out.push(r))?;
        Ok((out, timing))
    }

    /// Keeps up to `window` requests in flight; `on_result` sees results in
    /// sequence order as they complete. On failure, results already
    /// delivered stay delivered.
    pub fn run_inference_with(
        &mut self,
        inputs: &[Vec<TensorValue>],
        window: usize,
        mut on_result: impl FnMut(InferenceResult),
    ) -> Result<RunTiming, RuntimeError> {
        let window = window.max(1);
        let n_out = self.model.outputs.len();
        let base = self.next_seq;
        let started = Instant::now();
        let mut sent = 0usize;
        let mut starts: BTreeMap<u64, Instant> = BTreeMap::new();
        let mut partial: BTreeMap<u64, Vec<Option<Vec<i8>>>> = BTreeMap::new();
        let mut done: BTreeMap<u64, Vec<Vec<i8>>> = BTreeMap::new();
        let mut emitted = 0usize;
        let mut latency_sum = 0.0;
        while emitted < inputs.len() {
            while sent < inputs.len() && sent - emitted < window {
                let seq = base + sent as u64;
                let codes = quantize_inputs(&self.model, &inputs[sent])?;
                starts.insert(seq, Instant::now());
                partial.insert(seq, vec![None; n_out]);
                for k in 0..self.input_routes.len() {
                    let (board, index) = self.input_routes[k];
                    let pos = self.board_pos(board);
                    self.send(pos, &ComMessage::infer(index as u32, seq, &codes[index]))?;
                }
                sent += 1;
                self.next_seq = seq + 1;
            }
            let oldest = base + emitted as u64;
            match self.events.recv_timeout(self.run_timeout) {
                Ok(Event::Msg(board, m)) => match m.kind {
                    MsgType::Tensor => {
                        let slot = partial
                            .get_mut(&m.seq)
                            .and_then(|p| p.get_mut(m.channel as usize))
                            .ok_or_else(|| RuntimeError::Distributed {
                                board,
                                seq: m.seq,
                                message: format!("unexpected output {} for seq {}", m.channel, m.seq),
                            })?;
                        *slot = Some(m.as_i8());
                        if partial[&m.seq].iter().all(Option::is_some) {
                            let p = partial.remove(&m.seq).expect("present");
                            done.insert(m.seq, p.into_iter().map(|o| o.expect("complete")).collect());
                        }
                    }
                    MsgType::Error => {
                        return Err(RuntimeError::Distributed {
                            board,
                            seq: m.seq,
                            message: m.text(),
                        })
                    }
                    k => debug!("ignoring {k:?} from board {board} during run"),
                },
                Ok(Event::Closed(board, why)) => {
                    return Err(RuntimeError::Distributed {
                        board,
                        seq: oldest,
                        message: why,
                    })
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(RuntimeError::Timeout(format!("result of seq {oldest}")));
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(RuntimeError::Timeout("all board connections closed".into()));
                }
            }
            while let Some(codes) = done.remove(&(base + emitted as u64)) {
                let seq = base + emitted as u64;
                let wall = starts.remove(&seq).expect("started").elapsed().as_secs_f64() * 1e6;
                latency_sum += wall;
                on_result(InferenceResult {
                    seq,
                    outputs: dequantize_outputs(&self.model, &codes)?,
                    codes,
                    wall_latency_us: wall,
                    simulated_latency_us: self.simulated_latency_us,
                });
                emitted += 1;
            }
        }
        let wall_s = started.elapsed().as_secs_f64();
        Ok(RunTiming {
            requests: inputs.len(),
            window,
            wall_s,
            throughput_per_s: if wall_s > 0.0 { inputs.len() as f64 / wall_s } else { 0.0 },
            mean_latency_us: if inputs.is_empty() { 0.0 } else { latency_sum / inputs.len() as f64 },
        })
    }

    /// Queries every board; boards that do not answer in time are listed as
    /// missing. Spills per-board files when `IMCE_STATS_DIR` is set.
    pub fn collect_stats(&mut self) -> StatsReport {
        let mut waiting: BTreeSet<u32> = BTreeSet::new();
        for i in 0..self.boards.len() {
            if self.send(i, &ComMessage::new(MsgType::Stats, 0, 0, Vec::new())).is_ok() {
                waiting.insert(self.boards[i].id);
            }
        }
        let mut got: BTreeMap<u32, BoardStats> = BTreeMap::new();
        let deadline = Instant::now() + Duration::from_secs(10);
        while !waiting.is_empty() {
            let left = deadline.saturating_duration_since(Instant::now());
            match self.events.recv_timeout(left) {
                Ok(Event::Msg(b, m)) if m.kind == MsgType::Stats => {
                    if let Ok(s) = m.parse_json::<BoardStats>() {
                        waiting.remove(&b);
                        got.insert(b, s);
                    }
                }
                Ok(Event::Closed(b, _)) => {
                    waiting.remove(&b);
                }
                Ok(_) => {}
                Err(_) => break,
            }
        }
        let report = StatsReport {
            missing: self.board_ids().into_iter().filter(|b| !got.contains_key(b)).collect(),
            boards: got.into_values().collect(),
        };
        if let Some(sink) = StatsSink::from_env() {
            if let Err(e) = sink.write(&report) {
                warn!("stats sink {}: {e}", sink.dir().display());
            }
        }
        report
    }

    /// Tears down every board's configuration; workers keep listening.
    pub fn reset(&mut self) {
        for i in 0..self.boards.len() {
            let _ = self.send(i, &ComMessage::shutdown(SHUTDOWN_RESET));
        }
    }

    /// Stops every worker process.
    pub fn shutdown(mut self) {
        for i in 0..self.boards.len() {
            let _ = self.send(i, &ComMessage::shutdown(SHUTDOWN_EXIT));
        }
        let deadline = Instant::now() + Duration::from_secs(5);
        let mut left: BTreeSet<u32> = self.board_ids().into_iter().collect();
        while !left.is_empty() {
            match self.events.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
                Ok(Event::Closed(b, _)) => {
                    left.remove(&b);
                }
                Ok(_) => {}
                Err(_) => break,
            }
        }
    }
}
