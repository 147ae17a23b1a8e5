//! `--local` mode: one `imce-worker` process per board on loopback.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context};
use log::debug;

use imce_core::mapper::Deployment;

/// Line printed by a worker once it accepts connections.
pub const READY_PREFIX: &str = "listening on ";

pub struct LocalWorkers {
    children: Vec<Child>,
    pub addresses: BTreeMap<u32, String>,
}

/// `imce-worker` next to the running executable, or `IMCE_WORKER_BIN`.
pub fn default_worker_bin() -> PathBuf {
    if let Some(p) = std::env::var_os("IMCE_WORKER_BIN") {
        return p.into();
    }
    let exe = std::env::current_exe().unwrap_or_default();
    let dir = exe.parent().unwrap_or(Path::new("."));
    // integration tests run from target/<profile>/deps
    [dir.join("imce-worker"), dir.join("../imce-worker")]
        .into_iter()
        .find(|p| p.exists())
        .unwrap_or_else(|| dir.join("imce-worker"))
}

impl LocalWorkers {
    /// Starts a worker for every board that hosts nodes and waits until
    /// each reports its address.
    pub fn spawn(bin: &Path, dep: &Deployment) -> anyhow::Result<Self> {
        let mut me = Self {
            children: Vec::new(),
            addresses: BTreeMap::new(),
        };
        for cfg in dep.active_boards() {
            let role = cfg.board.class.to_string().to_lowercase();
            let mut child = Command::new(bin)
                .args(["--listen", "127.0.0.1:0", "--role", &role])
                .args(["--threads", &cfg.board.max_fthreads.max(1).to_string()])
                .stdin(Stdio::null())
                .stdout(Stdio::piped())
                .spawn()
                .with_context(|| format!("cannot start worker {}", bin.display()))?;
            let stdout = child.stdout.take().expect("piped stdout");
            me.children.push(child);
            let mut line = String::new();
            BufReader::new(stdout).read_line(&mut line)?;
            let addr = line
                .trim()
                .strip_prefix(READY_PREFIX)
                .ok_or_else(|| anyhow!("worker for board {} printed `{}`", cfg.board.board_id, line.trim()))?;
            debug!("board {} -> local worker {addr}", cfg.board.board_id);
            me.addresses.insert(cfg.board.board_id, addr.to_string());
        }
        Ok(me)
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }
}

impl Drop for LocalWorkers {
    fn drop(&mut self) {
        // workers exit on Shutdown; anything still running is killed
        let deadline = Instant::now() + Duration::from_secs(2);
        for c in &mut self.children {
            while Instant::now() < deadline {
                if let Ok(Some(_)) = c.try_wait() {
                    break;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}
