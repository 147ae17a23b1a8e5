//! Run manifest: everything `imce run` needs, as one JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;
use imce_core::mapper::Strategy;
use imce_core::model_ir::{load_tensors, ModelGraph, TensorValue};
use imce_core::{zoo, NoiseModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    /// Tensor-set files matching a glob, read in sorted path order.
    Files { glob: String },
    /// `count` uniform random inputs from `seed`.
    Synthetic { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: PathBuf,
    /// Calibration tensor set; synthetic samples from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration: Option<PathBuf>,
    pub hw_info: PathBuf,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Noise spec such as `sigma_prog=0.05,seed=3`, or `none`.
    #[serde(default = "default_noise")]
    pub noise: String,
    #[serde(default = "default_window")]
    pub window: usize,
    pub input: InputSource,
    #[serde(default)]
    pub seed: u64,
    /// Emulated device time per firing, as a multiple of the cost model.
    #[serde(default)]
    pub pace_factor: f64,
}

fn default_strategy() -> Strategy {
    Strategy::LoadBalance
}

fn default_noise() -> String {
    "none".into()
}

fn default_window() -> usize {
    1
}

/// Number of synthetic calibration samples drawn when no file is given.
pub const SYNTHETIC_CALIBRATION: usize = 8;

impl RunManifest {
    /// Reads a manifest; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("parse error in {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut m.model);
        rebase(&mut m.hw_info);
        if let Some(c) = &mut m.calibration {
            rebase(c);
        }
        if let InputSource::Files { glob } = &mut m.input {
            if Path::new(glob.as_str()).is_relative() {
                *glob = base.join(&*glob).to_string_lossy().into_owned();
            }
        }
        Ok(m)
    }

    pub fn noise_model(&self) -> Result<NoiseModel, CliError> {
        self.noise
            .parse()
            .map_err(|e| CliError::validation(format!("noise `{}`: {e}", self.noise)))
    }

    /// Checks that every referenced path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        for (what, p) in [("model", Some(&self.model)), ("hw_info", Some(&self.hw_info)), ("calibration", self.calibration.as_ref())] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(CliError::validation(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        if self.window == 0 {
            return Err(CliError::validation("window must be at least 1"));
        }
        if !(self.pace_factor >= 0.0 && self.pace_factor.is_finite()) {
            return Err(CliError::validation("pace_factor must be a finite non-negative number"));
        }
        self.noise_model()?;
        Ok(())
    }
}

/// Loaded requests and their labels (all present or none).
pub struct Inputs {
    pub values: Vec<Vec<TensorValue>>,
    pub labels: Option<Vec<usize>>,
}

pub fn load_inputs(src: &InputSource, g: &ModelGraph) -> Result<Inputs, CliError> {
    match src {
        InputSource::Synthetic { count, seed } => Ok(Inputs {
            values: zoo::random_inputs(g, *count, *seed),
            labels: None,
        }),
        InputSource::Files { glob: pattern } => {
            let mut paths: Vec<PathBuf> = glob::glob(pattern)
                .map_err(|e| CliError::validation(format!("bad input glob `{pattern}`: {e}")))?
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::validation(e.to_string()))?;
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::validation(format!("no input files match `{pattern}`")));
            }
            let mut values = Vec::new();
            let mut labels = Some(Vec::new());
            for p in paths {
                let set = load_tensors(&p)?;
                values.extend(set.values()?);
                labels = match (labels, set.labels()) {
                    (Some(mut l), Some(more)) => {
                        l.extend(more);
                        Some(l)
                    }
                    _ => None,
                };
            }
            Ok(Inputs { values, labels })
        }
    }
}
