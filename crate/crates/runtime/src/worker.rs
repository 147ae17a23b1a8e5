//! One emulated processing unit. Every hosted node runs on its own F-thread
//! and every inter-board transition has its own TCP connection (S-link).
//!
//! Connection lifecycle: the opener sends Hello. A control connection then
//! carries Configure (load), one Weights message per node, Configure
//! (connect), then Infer/Stats/Shutdown. A link connection carries Tensor
//! frames of a single channel.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::protocol::{
    ComMessage, Hello, MsgType, ProtocolError, CONFIGURE_CONNECT, CONFIGURE_LOAD, SHUTDOWN_EXIT, SHUTDOWN_RESET,
    VERSION,
};
use crate::stats::{BoardStats, LinkStats, NodeStats};
use imce_core::compiler::{AccelClass, CompiledNodeRecord};
use imce_core::exec::NodeExecutor;
use imce_core::mapper::{BoardConfig, Transition};

const HELLO_TIMEOUT: Duration = Duration::from_secs(10);
const LINK_TIMEOUT: Duration = Duration::from_secs(10);

/// Body of a Configure (load) message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigurePayload {
    /// Node records point into the per-node Weights payloads.
    pub config: BoardConfig,
    /// Reachable address of every board this one sends to.
    pub peers: BTreeMap<u32, String>,
    /// Emulated device time: each firing lasts at least
    /// `cost_hint_us * pace_factor` microseconds. 0 disables pacing.
    #[serde(default)]
    pub pace_factor: f64,
}

/// Cuts one node's tensors out of the model blob; returns the record
/// rebased onto the cut-out bytes.
pub fn rebase_node(r: &CompiledNodeRecord, blob: &[u8]) -> Option<(CompiledNodeRecord, Vec<u8>)> {
    let mut out = r.clone();
    let mut bytes = Vec::new();
    if let Some(w) = &mut out.weights {
        let s = w.blob.slice(blob)?;
        w.blob.offset = 0;
        bytes.extend_from_slice(s);
    }
    if let Some(b) = &mut out.bias {
        let s = b.slice(blob)?;
        b.offset = bytes.len() as u64;
        bytes.extend_from_slice(s);
    }
    Some((out, bytes))
}

/// Sequence number and codes of one tensor in flight.
type Frame = (u64, Arc<Vec<i8>>);

#[derive(Debug, Clone, Copy)]
pub struct WorkerOptions {
    pub role: AccelClass,
    /// Most nodes (F-threads) the worker accepts.
    pub threads: usize,
}

struct Input {
    slot: usize,
    seq: u64,
    data: Arc<Vec<i8>>,
}

#[derive(Clone)]
enum Target {
    Local { tx: Sender<Input>, slot: usize },
    Link(Sender<Frame>),
    Output(u32),
}

/// A configured board. Receivers are taken by the F-threads at connect.
struct Board {
    cfg: BoardConfig,
    peers: BTreeMap<u32, String>,
    pace_factor: f64,
    records: Vec<Option<(CompiledNodeRecord, Vec<u8>)>>,
    executors: Vec<Arc<NodeExecutor>>,
    inputs: Vec<Sender<Input>>,
    receivers: Vec<Option<Receiver<Input>>>,
    node_stats: Vec<Arc<Mutex<NodeStats>>>,
    links_out: BTreeMap<u32, Arc<Mutex<LinkStats>>>,
    links_in: BTreeMap<u32, Arc<Mutex<LinkStats>>>,
    infer_in: Arc<Mutex<LinkStats>>,
    results_out: Arc<Mutex<LinkStats>>,
    /// Streams closed on reset.
    streams: Vec<TcpStream>,
    running: bool,
}

impl Board {
    fn node_index(&self, id: &str) -> Option<usize> {
        self.cfg.nodes.iter().position(|r| r.node.id == id)
    }

    fn loaded(&self) -> bool {
        self.executors.len() == self.cfg.nodes.len()
    }

    fn stats(&self, role: AccelClass) -> BoardStats {
        let snap = |m: &BTreeMap<u32, Arc<Mutex<LinkStats>>>| m.values().map(|s| s.lock().unwrap().clone()).collect();
        BoardStats {
            board: self.cfg.board.board_id,
            role: role.to_string(),
            nodes: self.node_stats.iter().map(|s| s.lock().unwrap().clone()).collect(),
            links_out: snap(&self.links_out),
            links_in: snap(&self.links_in),
            infer_in: self.infer_in.lock().unwrap().clone(),
            results_out: self.results_out.lock().unwrap().clone(),
        }
    }

    fn teardown(&mut self) {
        for s in &self.streams {
            let _ = s.shutdown(Shutdown::Both);
        }
        self.streams.clear();
        self.inputs.clear();
    }
}

struct Shared {
    opts: WorkerOptions,
    exit: AtomicBool,
    board: Mutex<Option<Board>>,
    addr: SocketAddr,
}

/// Serves connections until a Shutdown(exit) arrives.
pub fn serve(listener: TcpListener, opts: WorkerOptions) -> std::io::Result<()> {
    let shared = Arc::new(Shared {
        opts,
        exit: AtomicBool::new(false),
        board: Mutex::new(None),
        addr: listener.local_addr()?,
    });
    info!("worker ({}) listening on {}", opts.role, shared.addr);
    for stream in listener.incoming() {
        if shared.exit.load(Ordering::SeqCst) {
            break;
        }
        match stream {
            Ok(s) => {
                let sh = Arc::clone(&shared);
                thread::spawn(move || handle_connection(sh, s));
            }
            Err(e) => warn!("accept failed: {e}"),
        }
    }
    if let Some(b) = shared.board.lock().unwrap().as_mut() {
        b.teardown();
    }
    info!("worker on {} stopped", shared.addr);
    Ok(())
}

/// Binds `addr` and serves on a background thread. Returns the bound
/// address (useful with port 0) and the join handle.
pub fn spawn(addr: &str, opts: WorkerOptions) -> std::io::Result<(SocketAddr, thread::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((local, thread::spawn(move || serve(listener, opts))))
}

fn send_error(stream: &mut TcpStream, channel: u32, seq: u64, text: &str) {
    let _ = ComMessage::error(channel, seq, text).write_to(stream);
}

fn handle_connection(sh: Arc<Shared>, mut stream: TcpStream) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let _ = stream.set_nodelay(true);
    let _ = stream.set_read_timeout(Some(HELLO_TIMEOUT));
    let hello = match ComMessage::read_from(&mut stream) {
        Ok(m) if m.kind == MsgType::Hello => m.parse_json::<Hello>(),
        Ok(m) => Err(ProtocolError::Payload {
            kind: m.kind,
            reason: "expected Hello first".into(),
        }),
        Err(e) => Err(e),
    };
    let _ = stream.set_read_timeout(None);
    match hello {
        Ok(Hello::Control { version }) if version == VERSION => control_loop(sh, stream),
        Ok(Hello::Link {
            version,
            from_board,
            channel,
        }) if version == VERSION => link_reader(sh, stream, from_board, channel),
        Ok(h) => send_error(&mut stream, 0, 0, &format!("unsupported hello {h:?}")),
        Err(ProtocolError::Closed) => {}
        Err(e) => {
            debug!("rejecting connection from {peer}: {e}");
            send_error(&mut stream, 0, 0, &e.to_string());
        }
    }
}

fn control_loop(sh: Arc<Shared>, stream: TcpStream) {
    let Ok(write_half) = stream.try_clone() else { return };
    let (ctl_tx, ctl_rx) = unbounded::<ComMessage>();
    let writer = thread::spawn(move || {
        let mut w = BufWriter::new(write_half);
        for m in ctl_rx {
            if m.write_to(&mut w).is_err() {
                break;
            }
        }
    });
    let _ = ctl_tx.send(ComMessage::json(
        MsgType::Hello,
        0,
        0,
        &Hello::Worker {
            version: VERSION,
            role: sh.opts.role.to_string().to_lowercase(),
        },
    ));
    let mut reader = BufReader::new(stream.try_clone().expect("clone control stream"));
    loop {
        let msg = match ComMessage::read_from(&mut reader) {
            Ok(m) => m,
            Err(ProtocolError::Closed) => break,
            Err(e) => {
                let _ = ctl_tx.send(ComMessage::error(0, 0, e.to_string()));
                break;
            }
        };
        let (kind, seq) = (msg.kind, msg.seq);
        match on_control(&sh, msg, &ctl_tx) {
            Ok(Flow::Continue) => {}
            Ok(Flow::Exit) => {
                sh.exit.store(true, Ordering::SeqCst);
                // wake the accept loop
                let _ = TcpStream::connect(sh.addr);
                break;
            }
            Err(text) => {
                warn!("{kind:?} seq {seq}: {text}");
                let _ = ctl_tx.send(ComMessage::error(0, seq, text));
            }
        }
    }
    drop(ctl_tx);
    let _ = stream.shutdown(Shutdown::Read);
    let _ = writer.join();
}

enum Flow {
    Continue,
    Exit,
}

fn on_control(sh: &Shared, msg: ComMessage, ctl: &Sender<ComMessage>) -> Result<Flow, String> {
    let ack = |m: &ComMessage| {
        let _ = ctl.send(ComMessage::ack(m.kind, m.seq));
    };
    if (msg.kind, msg.channel) == (MsgType::Configure, CONFIGURE_CONNECT) {
        // dial without holding the lock: peers lock their own board to accept
        let (id, links, peers) = {
            let guard = sh.board.lock().unwrap();
            let b = guard.as_ref().ok_or("connect before Configure")?;
            if !b.loaded() {
                return Err("connect before all Weights arrived".into());
            }
            if b.running {
                return Err("board already running".into());
            }
            (b.cfg.board.board_id, b.cfg.links_out.clone(), b.peers.clone())
        };
        let dialed = dial_links(id, &links, &peers)?;
        let mut guard = sh.board.lock().unwrap();
        let b = guard.as_mut().ok_or("board reset during connect")?;
        start_board(b, dialed, ctl)?;
        ack(&msg);
        return Ok(Flow::Continue);
    }
    let mut guard = sh.board.lock().unwrap();
    match (msg.kind, msg.channel) {
        (MsgType::Configure, CONFIGURE_LOAD) => {
            if let Some(mut old) = guard.take() {
                old.teardown();
            }
            let p: ConfigurePayload = msg.parse_json().map_err(|e| e.to_string())?;
            *guard = Some(load_board(sh.opts, p)?);
            ack(&msg);
        }
        (MsgType::Weights, i) => {
            let b = guard.as_mut().ok_or("Weights before Configure")?;
            let i = i as usize;
            let r = b
                .cfg
                .nodes
                .get(i)
                .ok_or_else(|| format!("Weights for node slot {i}, board hosts {}", b.cfg.nodes.len()))?;
            b.records[i] = Some((r.clone(), msg.payload.clone()));
            if b.records.iter().all(Option::is_some) && !b.loaded() {
                prepare_executors(b)?;
            }
            ack(&msg);
        }
        (MsgType::Infer, index) => {
            let b = guard.as_mut().filter(|b| b.running).ok_or("Infer on an unconfigured board")?;
            let data = Arc::new(msg.as_i8());
            let bindings: Vec<_> = b.cfg.graph_inputs.iter().filter(|g| g.index == index as usize).collect();
            if bindings.is_empty() {
                return Err(format!("board {} has no graph input {index}", b.cfg.board.board_id));
            }
            for g in &bindings {
                let n = b.node_index(&g.node).expect("binding node is hosted");
                let want = b.executors[n].input_lens()[g.slot];
                if data.len() != want {
                    return Err(format!(
                        "input {index} for node {} expected {want} bytes, got {}",
                        g.node,
                        data.len()
                    ));
                }
            }
            b.infer_in.lock().unwrap().record(msg.frame_len());
            for g in bindings {
                let n = b.node_index(&g.node).expect("binding node is hosted");
                let _ = b.inputs[n].send(Input {
                    slot: g.slot,
                    seq: msg.seq,
                    data: Arc::clone(&data),
                });
            }
        }
        (MsgType::Stats, _) => {
            let stats = match guard.as_ref() {
                Some(b) => b.stats(sh.opts.role),
                None => BoardStats {
                    role: sh.opts.role.to_string(),
                    ..Default::default()
                },
            };
            let _ = ctl.send(ComMessage::json(MsgType::Stats, 0, msg.seq, &stats));
        }
        (MsgType::Shutdown, c) if c == SHUTDOWN_EXIT || c == SHUTDOWN_RESET => {
            if let Some(mut b) = guard.take() {
                b.teardown();
            }
            ack(&msg);
            if c == SHUTDOWN_EXIT {
                return Ok(Flow::Exit);
            }
        }
        (kind, channel) => return Err(format!("unexpected {kind:?} on channel {channel}")),
    }
    Ok(Flow::Continue)
}

fn load_board(opts: WorkerOptions, p: ConfigurePayload) -> Result<Board, String> {
    let cfg = p.config;
    let id = cfg.board.board_id;
    if cfg.board.class != opts.role {
        return Err(format!(
            "board {id} is {} but this worker has role {}",
            cfg.board.class, opts.role
        ));
    }
    if let Some(r) = cfg.nodes.iter().find(|r| r.class != opts.role) {
        return Err(format!("node {} ({}) needs a {} board", r.node.id, r.node.kind, r.class));
    }
    if cfg.nodes.len() > opts.threads {
        return Err(format!(
            "board {id} hosts {} nodes, worker runs at most {} F-threads",
            cfg.nodes.len(),
            opts.threads
        ));
    }
    if !(p.pace_factor >= 0.0 && p.pace_factor.is_finite()) {
        return Err(format!("invalid pace factor {}", p.pace_factor));
    }
    let n = cfg.nodes.len();
    let (inputs, receivers): (Vec<_>, Vec<_>) = (0..n)
        .map(|_| {
            let (tx, rx) = unbounded();
            (tx, Some(rx))
        })
        .unzip();
    let link_stats = |ts: &[Transition]| {
        ts.iter()
            .map(|t| {
                (
                    t.channel,
                    Arc::new(Mutex::new(LinkStats {
                        channel: t.channel,
                        ..Default::default()
                    })),
                )
            })
            .collect()
    };
    let board = Board {
        node_stats: cfg
            .nodes
            .iter()
            .map(|r| {
                Arc::new(Mutex::new(NodeStats {
                    node: r.node.id.clone(),
                    ..Default::default()
                }))
            })
            .collect(),
        links_out: link_stats(&cfg.links_out),
        links_in: link_stats(&cfg.links_in),
        infer_in: Default::default(),
        results_out: Default::default(),
        records: vec![None; n],
        executors: Vec::new(),
        inputs,
        receivers,
        peers: p.peers,
        pace_factor: p.pace_factor,
        streams: Vec::new(),
        running: false,
        cfg,
    };
    let mut board = board;
    if n == 0 {
        prepare_executors(&mut board)?;
    }
    Ok(board)
}

fn prepare_executors(b: &mut Board) -> Result<(), String> {
    let noise = b.cfg.noise;
    b.executors = b
        .records
        .iter()
        .map(|r| {
            let (rec, blob) = r.as_ref().expect("all weights present");
            let node = rec.to_node(blob).map_err(|e| e.to_string())?;
            NodeExecutor::prepare(&node, &noise)
                .map(Arc::new)
                .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(())
}

/// Opens one connection per outgoing transition and completes the link
/// handshake on each.
fn dial_links(
    id: u32,
    links: &[Transition],
    peers: &BTreeMap<u32, String>,
) -> Result<Vec<(Transition, TcpStream)>, String> {
    let mut out = Vec::new();
    for t in links {
        let addr = peers
            .get(&t.dst_board)
            .ok_or_else(|| format!("no address for board {}", t.dst_board))?;
        let mut s = dial(addr).map_err(|e| format!("S-link {} to board {} ({addr}): {e}", t.channel, t.dst_board))?;
        let hello = Hello::Link {
            version: VERSION,
            from_board: id,
            channel: t.channel,
        };
        ComMessage::json(MsgType::Hello, t.channel, 0, &hello)
            .write_to(&mut s)
            .map_err(|e| e.to_string())?;
        s.set_read_timeout(Some(LINK_TIMEOUT)).map_err(|e| e.to_string())?;
        let reply = ComMessage::read_from(&mut s).map_err(|e| format!("S-link {}: {e}", t.channel))?;
        match reply.kind {
            MsgType::Ack => {}
            MsgType::Error => return Err(format!("S-link {} refused: {}", t.channel, reply.text())),
            k => return Err(format!("S-link {}: unexpected {k:?}", t.channel)),
        }
        s.set_read_timeout(None).map_err(|e| e.to_string())?;
        out.push((t.clone(), s));
    }
    Ok(out)
}

/// Starts a writer per dialed S-link and one F-thread per node.
fn start_board(b: &mut Board, dialed: Vec<(Transition, TcpStream)>, ctl: &Sender<ComMessage>) -> Result<(), String> {
    let id = b.cfg.board.board_id;
    let mut link_tx: HashMap<u32, Sender<Frame>> = HashMap::new();
    for (t, s) in dialed {
        b.streams.push(s.try_clone().map_err(|e| e.to_string())?);
        let (tx, rx) = unbounded::<Frame>();
        link_tx.insert(t.channel, tx);
        let stats = Arc::clone(&b.links_out[&t.channel]);
        let (channel, ctl) = (t.channel, ctl.clone());
        thread::spawn(move || {
            let mut w = BufWriter::new(s);
            for (seq, data) in rx {
                let m = ComMessage::tensor(channel, seq, &data);
                if let Err(e) = m.write_to(&mut w) {
                    let _ = ctl.send(ComMessage::error(0, seq, format!("board {id} S-link {channel}: {e}")));
                    break;
                }
                stats.lock().unwrap().record(m.frame_len());
            }
        });
    }

    for (i, ex) in b.executors.iter().enumerate() {
        let nid = ex.id().to_string();
        let n_out = ex.node().output_shapes.len();
        let mut targets: Vec<Vec<Target>> = vec![Vec::new(); n_out];
        for t in b.cfg.local.iter().filter(|t| t.src_node == nid) {
            let j = b.node_index(&t.dst_node).ok_or_else(|| format!("local target {} not hosted", t.dst_node))?;
            targets[t.src_output].push(Target::Local {
                tx: b.inputs[j].clone(),
                slot: t.dst_slot,
            });
        }
        for t in b.cfg.links_out.iter().filter(|t| t.src_node == nid) {
            targets[t.src_output].push(Target::Link(link_tx[&t.channel].clone()));
        }
        for g in b.cfg.graph_outputs.iter().filter(|g| g.node == nid) {
            targets[g.output].push(Target::Output(g.index as u32));
        }
        let rx = b.receivers[i].take().expect("F-thread started once");
        let fthread = FThread {
            board: id,
            exec: Arc::clone(ex),
            targets,
            ctl: ctl.clone(),
            stats: Arc::clone(&b.node_stats[i]),
            results: Arc::clone(&b.results_out),
            pace: Duration::from_secs_f64(ex.node().cost_hint_us * b.pace_factor * 1e-6),
        };
        thread::Builder::new()
            .name(format!("f-{nid}"))
            .spawn(move || fthread.run(rx))
            .map_err(|e| e.to_string())?;
    }
    b.running = true;
    Ok(())
}

fn dial(addr: &str) -> std::io::Result<TcpStream> {
    let sa = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| std::io::Error::other(format!("cannot resolve {addr}")))?;
    let s = TcpStream::connect_timeout(&sa, LINK_TIMEOUT)?;
    s.set_nodelay(true)?;
    Ok(s)
}

struct FThread {
    board: u32,
    exec: Arc<NodeExecutor>,
    targets: Vec<Vec<Target>>,
    ctl: Sender<ComMessage>,
    stats: Arc<Mutex<NodeStats>>,
    results: Arc<Mutex<LinkStats>>,
    pace: Duration,
}

impl FThread {
    fn run(self, rx: Receiver<Input>) {
        let n_in = self.exec.input_lens().len();
        let mut pending: BTreeMap<u64, Vec<Option<Arc<Vec<i8>>>>> = BTreeMap::new();
        let mut last_fired: Option<u64> = None;
        while let Ok(inp) = rx.recv() {
            {
                let mut s = self.stats.lock().unwrap();
                s.max_queue_depth = s.max_queue_depth.max(rx.len() + 1);
                s.bytes_in += inp.data.len() as u64;
            }
            let slots = pending.entry(inp.seq).or_insert_with(|| vec![None; n_in]);
            if inp.slot >= n_in || slots[inp.slot].is_some() {
                self.fail(inp.seq, format!("duplicate or invalid input slot {}", inp.slot));
                continue;
            }
            slots[inp.slot] = Some(inp.data);
            if slots.iter().any(Option::is_none) {
                continue;
            }
            let seq = inp.seq;
            let slots = pending.remove(&seq).expect("entry present");
            if last_fired.is_some_and(|l| seq <= l) {
                self.fail(seq, format!("sequence {seq} after {}", last_fired.unwrap_or(0)));
                continue;
            }
            last_fired = Some(seq);
            let ins: Vec<&[i8]> = slots.iter().map(|s| s.as_deref().expect("complete").as_slice()).collect();
            let start = Instant::now();
            let out = self.exec.execute(&ins, seq);
            let kernel = start.elapsed();
            if let Some(rest) = self.pace.checked_sub(start.elapsed()) {
                thread::sleep(rest);
            }
            let out = match out {
                Ok(o) => o,
                Err(e) => {
                    self.fail(seq, e.to_string());
                    continue;
                }
            };
            {
                let mut s = self.stats.lock().unwrap();
                s.invocations += 1;
                s.kernel_us += kernel.as_secs_f64() * 1e6;
                s.bytes_out += out.iter().map(|o| o.len() as u64).sum::<u64>();
            }
            for (o, data) in out.into_iter().enumerate() {
                let data = Arc::new(data);
                for t in &self.targets[o] {
                    match t {
                        Target::Local { tx, slot } => {
                            let _ = tx.send(Input {
                                slot: *slot,
                                seq,
                                data: Arc::clone(&data),
                            });
                        }
                        Target::Link(tx) => {
                            let _ = tx.send((seq, Arc::clone(&data)));
                        }
                        Target::Output(index) => {
                            let m = ComMessage::tensor(*index, seq, &data);
                            self.results.lock().unwrap().record(m.frame_len());
                            let _ = self.ctl.send(m);
                        }
                    }
                }
            }
        }
    }

    fn fail(&self, seq: u64, text: String) {
        let msg = format!("board {} node {}: {text}", self.board, self.exec.id());
        warn!("{msg}");
        let _ = self.ctl.send(ComMessage::error(0, seq, msg));
    }
}

/// Reads Tensor frames of one transition and feeds the destination slot.
fn link_reader(sh: Arc<Shared>, mut stream: TcpStream, from_board: u32, channel: u32) {
    let found = {
        let mut guard = sh.board.lock().unwrap();
        guard.as_mut().and_then(|b| {
            let t = b.cfg.links_in.iter().find(|t| t.channel == channel && t.src_board == from_board)?;
            let j = b.node_index(&t.dst_node)?;
            let clone = stream.try_clone().ok()?;
            b.streams.push(clone);
            Some((b.inputs.get(j)?.clone(), t.dst_slot, Arc::clone(&b.links_in[&channel])))
        })
    };
    let Some((tx, slot, stats)) = found else {
        send_error(&mut stream, channel, 0, &format!("no inbound S-link {channel} from board {from_board}"));
        return;
    };
    if ComMessage::ack(MsgType::Hello, 0).write_to(&mut stream).is_err() {
        return;
    }
    let mut reader = BufReader::new(stream.try_clone().expect("clone link stream"));
    let mut last: Option<u64> = None;
    loop {
        let m = match ComMessage::read_from(&mut reader) {
            Ok(m) => m,
            Err(ProtocolError::Closed) => break,
            Err(e) => {
                send_error(&mut stream, channel, 0, &e.to_string());
                break;
            }
        };
        if m.kind != MsgType::Tensor || m.channel != channel || last.is_some_and(|l| m.seq <= l) {
            send_error(
                &mut stream,
                channel,
                m.seq,
                &format!("S-link {channel}: unexpected {:?} channel {} seq {}", m.kind, m.channel, m.seq),
            );
            break;
        }
        last = Some(m.seq);
        stats.lock().unwrap().record(m.frame_len());
        let input = Input {
            slot,
            seq: m.seq,
            data: Arc::new(m.as_i8()),
        };
        if tx.send(input).is_err() {
            break;
        }
    }
}
