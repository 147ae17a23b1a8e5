//! Run reports. `report.json` holds only reproducible content; wall-clock
//! measurements go to `timing.json`.

use serde::{Deserialize, Serialize};

use imce_core::mapper::Strategy;
use imce_core::model_ir::TensorRecord;
use imce_core::nvm_noise::counter_hash;
use imce_core::{CompiledModel, NoiseModel};
use imce_runtime::{BoardStats, InferenceResult, RunTiming};

pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";
pub const OUTPUTS_FILE: &str = "outputs.json";

/// Measured rates of the FPGA cluster, echoed for comparison. They are
/// hardware numbers and are not reproduced by the emulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareFigure {
    pub model: String,
    pub images_per_s: f64,
    pub latency_ms: f64,
}

pub fn hardware_figures() -> Vec<HardwareFigure> {
    vec![
        HardwareFigure {
            model: "resnet8".into(),
            images_per_s: 39.0,
            latency_ms: 121.0,
        },
        HardwareFigure {
            model: "resnet18s".into(),
            images_per_s: 18.0,
            latency_ms: 444.0,
        },
    ]
}

/// Cost-model view of the deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulated {
    /// Sum of cost estimates along the critical path.
    pub latency_us: f64,
    /// Pipelined rate limited by the slowest node.
    pub throughput_per_s: f64,
    pub bottleneck_node: String,
}

impl Simulated {
    pub fn of(cm: &CompiledModel) -> Self {
        let slowest = cm
            .nodes
            .iter()
            .max_by(|a, b| a.cost_hint_us.total_cmp(&b.cost_hint_us).then_with(|| b.id().cmp(a.id())));
        Self {
            latency_us: cm.critical_path_us(),
            throughput_per_s: slowest.map_or(0.0, |n| 1e6 / n.cost_hint_us.max(f64::MIN_POSITIVE)),
            bottleneck_node: slowest.map(|n| n.id().to_string()).unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub model: String,
    pub strategy: Strategy,
    pub window: usize,
    pub noise: NoiseModel,
    pub seed: u64,
    pub requests: usize,
    pub completed: usize,
    pub nodes: usize,
    pub boards_used: usize,
    pub s_links: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<usize>,
    pub simulated: Simulated,
    pub hardware_reference: Vec<HardwareFigure>,
    /// Hash of every output code, in request order.
    pub outputs_digest: String,
    /// Per-board counters with wall-clock fields zeroed.
    pub stats: Vec<BoardStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTiming {
    pub node: String,
    pub invocations: u64,
    pub kernel_us: f64,
    pub max_queue_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub run: Option<RunTiming>,
    pub nodes: Vec<NodeTiming>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    /// Arg-max of the first output.
    pub prediction: usize,
    pub outputs: Vec<TensorRecord>,
    pub codes: Vec<Vec<i8>>,
}

pub fn argmax(v: &[f32]) -> usize {
    imce_core::digits::argmax(v)
}

impl OutputRecord {
    pub fn from_result(r: &InferenceResult, label: Option<usize>) -> Self {
        let outputs: Vec<TensorRecord> = r
            .outputs
            .iter()
            .map(|t| TensorRecord {
                name: t.spec.name.clone(),
                shape: t.spec.shape.clone(),
                data: t.as_f32().unwrap_or_default().to_vec(),
            })
            .collect();
        Self {
            seq: r.seq,
            label,
            prediction: outputs.first().map_or(0, |o| argmax(&o.data)),
            outputs,
            codes: r.codes.clone(),
        }
    }
}

pub fn digest(records: &[OutputRecord]) -> String {
    let mut words = Vec::new();
    for r in records {
        words.push(r.seq);
        for c in &r.codes {
            words.push(c.len() as u64);
            words.extend(c.iter().map(|&v| v as u8 as u64));
        }
    }
    format!("{:016x}", counter_hash(&words))
}

/// Plain-text summary printed after a run.
pub fn render(report: &RunReport, timing: Option<&RunTiming>) -> String {
    let mut s = String::new();
    let row = |s: &mut String, k: &str, v: String| s.push_str(&format!("{k:<28}{v}\n"));
    row(&mut s, "model", report.model.clone());
    row(&mut s, "strategy / window", format!("{} / {}", report.strategy, report.window));
    row(&mut s, "requests completed", format!("{} of {}", report.completed, report.requests));
    row(&mut s, "boards / S-links", format!("{} / {}", report.boards_used, report.s_links));
    if let Some(a) = report.accuracy {
        row(&mut s, "accuracy", format!("{:.2}%", 100.0 * a));
    }
    if let Some(t) = timing {
        row(&mut s, "wall throughput", format!("{:.1} req/s", t.throughput_per_s));
        row(&mut s, "wall latency (mean)", format!("{:.2} ms", t.mean_latency_us / 1e3));
    }
    row(
        &mut s,
        "simulated throughput",
        format!("{:.1} req/s (bottleneck {})", report.simulated.throughput_per_s, report.simulated.bottleneck_node),
    );
    row(&mut s, "simulated latency", format!("{:.3} ms", report.simulated.latency_us / 1e3));
    for h in &report.hardware_reference {
        row(
            &mut s,
            &format!("hardware ({})", h.model),
            format!("{} img/s, {} ms (reference only)", h.images_per_s, h.latency_ms),
        );
    }
    s
}
