//! The `imce` subcommands as library functions, so tests can drive the
//! whole toolflow without going through argument parsing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use serde::Serialize;

use crate::error::{CliError, EXIT_DISTRIBUTED, EXIT_FAILURE};
use crate::local::LocalWorkers;
use crate::manifest::{load_inputs, RunManifest, SYNTHETIC_CALIBRATION};
use crate::report::{self, OutputRecord, RunReport, Simulated, TimingReport};
use imce_core::compiler::{
    compile_with, load_compiled, save_compiled, CalibrationSet, CompileOptions, CompileReport,
};
use imce_core::digits::{self, TinyCnn, TrainConfig};
use imce_core::exec::quantize_inputs;
use imce_core::mapper::{emit_configs, load_deployment, map_nodes, DeploymentPlan, HwInfo, Strategy};
use imce_core::model_ir::{load_model, load_tensors, save_model, save_tensors, ModelGraph, TensorSet, TensorValue};
use imce_core::{reference, zoo, AccelClass, CompiledModel, NoiseModel, SequentialInterpreter};
use imce_runtime::{configure_cluster, ClusterOptions, InferenceResult, StatsSink};

pub const COMPILE_REPORT_FILE: &str = "compile_report.json";

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::new(EXIT_FAILURE, e))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::new(EXIT_FAILURE, e).context(path.display().to_string()))
}

/// Calibration from a tensor-set file, or seeded random samples.
pub fn calibration(g: &ModelGraph, path: Option<&Path>, seed: u64) -> Result<CalibrationSet, CliError> {
    let samples = match path {
        Some(p) => load_tensors(p)?.values()?,
        None => zoo::random_inputs(g, SYNTHETIC_CALIBRATION, seed),
    };
    Ok(CalibrationSet { samples })
}

pub struct CompileOutcome {
    pub model: CompiledModel,
    pub report: CompileReport,
    pub files: Vec<PathBuf>,
}

impl CompileOutcome {
    pub fn render(&self) -> String {
        let mut s = String::from("pass        nodes\n");
        for p in &self.report.passes {
            let _ = writeln!(s, "{:<12}{}", p.pass, p.nodes);
        }
        let _ = writeln!(
            s,
            "An nodes: {}  Di nodes: {}",
            self.model.count_class(AccelClass::An),
            self.model.count_class(AccelClass::Di)
        );
        for t in &self.report.degenerate_tensors {
            let _ = writeln!(s, "warning: tensor {t} has an all-zero range, scale set to 1.0");
        }
        s
    }
}

pub fn cmd_compile(
    model: &Path,
    calibration_file: Option<&Path>,
    out: &Path,
    seed: u64,
    opts: &CompileOptions,
) -> Result<CompileOutcome, CliError> {
    let g = load_model(model)?;
    let cal = calibration(&g, calibration_file, seed)?;
    let (cm, report) = compile_with(&g, &cal, opts)?;
    let mut files = save_compiled(&cm, out)?;
    let rp = out.join(COMPILE_REPORT_FILE);
    write_json(&rp, &report)?;
    files.push(rp);
    Ok(CompileOutcome {
        model: cm,
        report,
        files,
    })
}

pub struct MapOutcome {
    pub plan: DeploymentPlan,
    pub files: Vec<PathBuf>,
}

impl MapOutcome {
    pub fn render(&self) -> String {
        format!(
            "{}strategy {}, {} boards used\n",
            self.plan.utilization_table(),
            self.plan.strategy,
            self.plan.used_boards().len()
        )
    }
}

pub fn cmd_map(
    compiled: &Path,
    hw: &Path,
    strategy: Strategy,
    noise: &NoiseModel,
    out: &Path,
) -> Result<MapOutcome, CliError> {
    let cm = load_compiled(compiled)?;
    let hw = HwInfo::load(hw)?;
    let plan = map_nodes(&cm, &hw, strategy)?;
    let files = emit_configs(&plan, &cm, noise, out)?;
    Ok(MapOutcome { plan, files })
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Spawn one local worker process per board.
    pub local: bool,
    pub worker_bin: PathBuf,
    pub timeout: Duration,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub timing: TimingReport,
    pub records: Vec<OutputRecord>,
}

impl RunOutcome {
    pub fn render(&self) -> String {
        report::render(&self.report, self.timing.run.as_ref())
    }
}

/// compile -> map -> configure -> run -> report, all under `opts.out`.
/// On a distributed failure the results received so far are still
/// written before the error is returned.
pub fn cmd_run(m: &RunManifest, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    m.validate()?;
    let noise = m.noise_model()?;
    let g = load_model(&m.model)?;
    let cal = calibration(&g, m.calibration.as_deref(), m.seed)?;
    let (cm, _) = compile_with(&g, &cal, &CompileOptions::default())?;
    let compiled_dir = opts.out.join("compiled");
    save_compiled(&cm, &compiled_dir)?;
    let hw = HwInfo::load(&m.hw_info)?;
    let plan = map_nodes(&cm, &hw, m.strategy)?;
    let deploy_dir = opts.out.join("deploy");
    emit_configs(&plan, &cm, &noise, &deploy_dir)?;
    let dep = load_deployment(&deploy_dir)?;
    let inputs = load_inputs(&m.input, &g)?;
    for x in &inputs.values {
        quantize_inputs(&cm, x)?;
    }

    let workers = if opts.local {
        Some(LocalWorkers::spawn(&opts.worker_bin, &dep).map_err(|e| CliError::new(EXIT_DISTRIBUTED, e))?)
    } else {
        None
    };
    let copts = ClusterOptions {
        timeout: opts.timeout,
        pace_factor: m.pace_factor,
        addresses: workers.as_ref().map(|w| w.addresses.clone()).unwrap_or_default(),
        ..Default::default()
    };
    let labels = inputs.labels.as_deref();
    let mut records = Vec::new();
    let mut failure = None;
    let mut run_timing = None;
    let mut stats = Vec::new();
    match configure_cluster(&dep, &copts) {
        Ok(mut cluster) => {
            let res = cluster.run_inference_with(&inputs.values, m.window, |r: InferenceResult| {
                let label = labels.map(|l| l[r.seq as usize]);
                records.push(OutputRecord::from_result(&r, label));
            });
            match res {
                Ok(t) => run_timing = Some(t),
                Err(e) => failure = Some(CliError::from(e)),
            }
            let sr = cluster.collect_stats();
            if !sr.missing.is_empty() {
                warn!("no stats from boards {:?}", sr.missing);
            }
            stats = sr.boards;
            if workers.is_some() {
                cluster.shutdown();
            }
        }
        Err(e) => failure = Some(CliError::from(e)),
    }
    drop(workers);

    let correct = labels.map(|_| records.iter().filter(|r| r.label == Some(r.prediction)).count());
    let report = RunReport {
        format: "imce-run-report".into(),
        version: 1,
        model: m
            .model
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        strategy: m.strategy,
        window: m.window,
        noise,
        seed: m.seed,
        requests: inputs.values.len(),
        completed: records.len(),
        nodes: cm.nodes.len(),
        boards_used: dep.active_boards().count(),
        s_links: dep.topology.s_links().count(),
        accuracy: correct.map(|c| c as f64 / records.len().max(1) as f64),
        correct,
        simulated: Simulated::of(&cm),
        hardware_reference: report::hardware_figures(),
        outputs_digest: report::digest(&records),
        stats: stats.iter().map(|b| b.without_timing()).collect(),
        error: failure.as_ref().map(|e| e.to_string()),
    };
    let timing = TimingReport {
        run: run_timing,
        nodes: stats
            .iter()
            .flat_map(|b| &b.nodes)
            .map(|n| report::NodeTiming {
                node: n.node.clone(),
                invocations: n.invocations,
                kernel_us: n.kernel_us,
                max_queue_depth: n.max_queue_depth,
            })
            .collect(),
    };
    write_json(&opts.out.join(report::OUTPUTS_FILE), &records)?;
    write_json(&opts.out.join(report::REPORT_FILE), &report)?;
    write_json(&opts.out.join(report::TIMING_FILE), &timing)?;
    if let Some(sink) = StatsSink::from_env() {
        info!("stats spilled to {}", sink.dir().display());
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(RunOutcome {
            report,
            timing,
            records,
        }),
    }
}

pub enum OracleSource<'a> {
    Compiled(&'a Path),
    /// Model compiled on the fly with seeded synthetic calibration.
    Model(&'a Path),
}

/// Sequential reference outputs. Request `i` runs with sequence number
/// `i`, matching a fresh cluster. `fp32` skips quantization entirely.
pub fn cmd_oracle(
    src: OracleSource<'_>,
    input: &Path,
    fp32: bool,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<OutputRecord>, CliError> {
    let set = load_tensors(input)?;
    let values = set.values()?;
    let labels = set.labels();
    let label = |i: usize| labels.as_ref().map(|l| l[i]);
    if fp32 {
        let OracleSource::Model(path) = src else {
            return Err(CliError::validation("--fp32 needs --model"));
        };
        let g = load_model(path)?;
        return values
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let out = reference::run_fp32(&g, x)?;
                Ok(fp32_record(i as u64, label(i), &out))
            })
            .collect();
    }
    let cm = match src {
        OracleSource::Compiled(dir) => load_compiled(dir)?,
        OracleSource::Model(path) => {
            let g = load_model(path)?;
            compile_with(&g, &calibration(&g, None, seed)?, &CompileOptions::default())?.0
        }
    };
    let it = SequentialInterpreter::new(cm.clone(), noise)?;
    values
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let codes = quantize_inputs(&cm, x)?;
            let out = it.run_codes(&codes, i as u64)?;
            let r = InferenceResult {
                seq: i as u64,
                outputs: imce_core::exec::dequantize_outputs(&cm, &out)?,
                codes: out,
                wall_latency_us: 0.0,
                simulated_latency_us: 0.0,
            };
            Ok(OutputRecord::from_result(&r, label(i)))
        })
        .collect()
}

fn fp32_record(seq: u64, label: Option<usize>, out: &[TensorValue]) -> OutputRecord {
    let r = InferenceResult {
        seq,
        outputs: out.to_vec(),
        codes: Vec::new(),
        wall_latency_us: 0.0,
        simulated_latency_us: 0.0,
    };
    OutputRecord::from_result(&r, label)
}

/// Summarizes the per-board files written by the stats sink.
pub fn cmd_stats(dir: &Path) -> Result<String, CliError> {
    let pattern = dir.join("board_*.stats.json");
    let mut paths: Vec<PathBuf> = glob::glob(&pattern.to_string_lossy())
        .map_err(|e| CliError::validation(e.to_string()))?
        .filter_map(Result::ok)
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::validation(format!("no stats files in {}", dir.display())));
    }
    let mut s = format!(
        "{:<6}{:<5}{:<18}{:>8}{:>12}{:>8}{:>12}{:>12}\n",
        "board", "role", "node", "calls", "kernel_ms", "queue", "bytes_in", "bytes_out"
    );
    for p in paths {
        let text = std::fs::read_to_string(&p)?;
        let b: imce_runtime::BoardStats =
            serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?;
        for n in &b.nodes {
            let _ = writeln!(
                s,
                "{:<6}{:<5}{:<18}{:>8}{:>12.3}{:>8}{:>12}{:>12}",
                b.board,
                b.role,
                n.node,
                n.invocations,
                n.kernel_us / 1e3,
                n.max_queue_depth,
                n.bytes_in,
                n.bytes_out
            );
        }
        for l in &b.links_out {
            let _ = writeln!(s, "{:<6}      S-link {:<10}{:>8} frames {:>10} bytes", b.board, l.channel, l.frames, l.bytes);
        }
    }
    Ok(s)
}

/// Built-in models for `imce gen`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GenKind {
    Mvm,
    Resnet8,
    Resnet18s,
    Yolo,
    Chain,
    Random,
    /// Trains the small digits classifier; inputs come with labels.
    Digits,
}

pub struct GenOutcome {
    pub graph: ModelGraph,
    pub inputs: TensorSet,
    pub note: String,
}

pub fn cmd_gen(kind: GenKind, seed: u64, count: usize) -> Result<GenOutcome, CliError> {
    let mut note = String::new();
    let graph = match kind {
        GenKind::Mvm => zoo::single_mvm(256, 64, seed),
        GenKind::Resnet8 => zoo::resnet8(seed),
        GenKind::Resnet18s => zoo::resnet18s(seed),
        GenKind::Yolo => zoo::yolo_snippet(seed),
        GenKind::Chain => zoo::conv_chain(6, 16, 16, seed),
        GenKind::Random => zoo::random_graph(seed, 15),
        GenKind::Digits => {
            let train = digits::generate(3000, seed);
            let test = digits::generate(count, seed.wrapping_add(1));
            let net = TinyCnn::train(&train, &TrainConfig { seed, ..Default::default() });
            note = format!("fp32 test accuracy {:.2}%", 100.0 * net.accuracy(&test));
            let values: Vec<Vec<TensorValue>> = (0..test.len()).map(|i| vec![test.tensor(i)]).collect();
            return Ok(GenOutcome {
                graph: net.to_graph(),
                inputs: TensorSet::from_values(&values, Some(&test.labels))?,
                note,
            });
        }
    };
    let inputs = TensorSet::from_values(&zoo::random_inputs(&graph, count, seed.wrapping_add(1)), None)?;
    Ok(GenOutcome { graph, inputs, note })
}

pub fn write_gen(g: &GenOutcome, model: &Path, inputs: Option<&Path>) -> Result<(), CliError> {
    save_model(&g.graph, model)?;
    if let Some(p) = inputs {
        save_tensors(&g.inputs, p)?;
    }
    Ok(())
}
