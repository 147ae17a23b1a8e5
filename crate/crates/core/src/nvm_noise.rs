//! NVM weight noise: programming error applied once when weights are loaded
//! and read noise applied to every MVM accumulator.
//!
//! Noise is additive Gaussian in weight-code space. Draws come from a
//! counter-based generator keyed by the seed and the position of the value
//! (node, row, column, invocation), so results do not depend on which board
//! hosts a node or in which order nodes execute.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kernels::an::AnMatrix;
use crate::quant::QMAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    None,
    GaussianProgramming,
    GaussianRead,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Standard deviation of programming error as a fraction of full scale (127).
    #[serde(default)]
    pub sigma_prog: f64,
    /// Standard deviation of per-cell read noise as a fraction of full scale.
    #[serde(default)]
    pub sigma_read: f64,
    #[serde(default)]
    pub seed: u64,
    /// Reserved for conductance drift; not modeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    pub const fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            sigma_prog: 0.0,
            sigma_read: 0.0,
            seed: 0,
            drift: None,
        }
    }

    pub fn programming(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianProgramming,
            sigma_prog: sigma,
            seed,
            ..Self::none()
        }
    }

    pub fn read(sigma: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianRead,
            sigma_read: sigma,
            seed,
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.sigma_prog >= 0.0 && self.sigma_prog.is_finite()) {
            return Err(format!("sigma_prog must be >= 0, got {}", self.sigma_prog));
        }
        if !(self.sigma_read >= 0.0 && self.sigma_read.is_finite()) {
            return Err(format!("sigma_read must be >= 0, got {}", self.sigma_read));
        }
        Ok(())
    }

    /// Effective programming sigma (0 when the kind does not include it).
    pub fn prog_sigma(&self) -> f64 {
        match self.kind {
            NoiseKind::GaussianProgramming | NoiseKind::Combined => self.sigma_prog,
            _ => 0.0,
        }
    }

    pub fn read_sigma(&self) -> f64 {
        match self.kind {
            NoiseKind::GaussianRead | NoiseKind::Combined => self.sigma_read,
            _ => 0.0,
        }
    }

    pub fn is_noiseless(&self) -> bool {
        self.prog_sigma() == 0.0 && self.read_sigma() == 0.0
    }
}

impl fmt::Display for NoiseModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "sigma_prog={},sigma_read={},seed={}",
            self.prog_sigma(),
            self.read_sigma(),
            self.seed
        )
    }
}

impl FromStr for NoiseModel {
    type Err = String;

    /// Parses `sigma_prog=0.05,sigma_read=0.01,seed=7` (any subset). The
    /// kind follows from which sigmas are given; `none` yields no noise.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Self::none());
        }
        let mut nm = Self::none();
        let (mut prog, mut read) = (false, false);
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let v = v.trim();
            match k.trim() {
                "sigma_prog" => {
                    nm.sigma_prog = v.parse().map_err(|e| format!("sigma_prog: {e}"))?;
                    prog = true;
                }
                "sigma_read" => {
                    nm.sigma_read = v.parse().map_err(|e| format!("sigma_read: {e}"))?;
                    read = true;
                }
                "seed" => nm.seed = v.parse().map_err(|e| format!("seed: {e}"))?,
                other => return Err(format!("unknown noise key `{other}`")),
            }
        }
        nm.kind = match (prog, read) {
            (true, true) => NoiseKind::Combined,
            (true, false) => NoiseKind::GaussianProgramming,
            (false, true) => NoiseKind::GaussianRead,
            (false, false) => NoiseKind::None,
        };
        nm.validate()?;
        Ok(nm)
    }
}

const DOMAIN_PROG: u64 = 0x5052_4f47; // "PROG"
const DOMAIN_READ: u64 = 0x5245_4144; // "READ"

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless keyed hash: the same words always give the same output.
pub fn counter_hash(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6a09_e667_f3bc_c909u64, |h, &w| splitmix(h ^ splitmix(w)))
}

/// Standard normal draw for a key, via Box-Muller on two derived uniforms.
pub fn gaussian(words: &[u64]) -> f64 {
    let h = counter_hash(words);
    let a = splitmix(h ^ 0x01);
    let b = splitmix(h ^ 0x02);
    let u1 = ((a >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Stable 64-bit key for a node id (FNV-1a).
pub fn node_key(node_id: &str) -> u64 {
    node_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Applies programming noise to every stored weight code.
pub fn program_weights(m: &AnMatrix, nm: &NoiseModel, node: u64) -> AnMatrix {
    let sigma = nm.prog_sigma() * QMAX as f64;
    if sigma == 0.0 {
        return m.clone();
    }
    let mut out = m.clone();
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            let eps = sigma * gaussian(&[nm.seed, DOMAIN_PROG, node, r as u64, c as u64]);
            let w = m.get(r, c) as f64 + eps;
            out.set(r, c, crate::quant::saturate_f64(w));
        }
    }
    out
}

/// Read-noise context for one kernel invocation of one node.
#[derive(Debug, Clone, Copy)]
pub struct ReadNoise<'a> {
    pub model: &'a NoiseModel,
    pub node: u64,
    pub invocation: u64,
}

impl ReadNoise<'_> {
    pub fn is_active(&self) -> bool {
        self.model.read_sigma() > 0.0
    }

    /// Perturbs the accumulators of MVM number `sub` within this invocation.
    pub fn apply(&self, acc: &mut [i32], rows: usize, sub: u64) {
        read_noise(acc, self.model, self.node, self.invocation, sub, rows)
    }
}

/// Additive Gaussian on each accumulator with std `sigma_read * 127 * sqrt(rows)`.
pub fn read_noise(acc: &mut [i32], nm: &NoiseModel, node: u64, invocation: u64, sub: u64, rows: usize) {
    let sigma = nm.read_sigma() * QMAX as f64 * (rows as f64).sqrt();
    if sigma == 0.0 {
        return;
    }
    for (j, a) in acc.iter_mut().enumerate() {
        let eps = sigma * gaussian(&[nm.seed, DOMAIN_READ, node, invocation, sub, j as u64]);
        *a = (*a as f64 + eps).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32;
    }
}
