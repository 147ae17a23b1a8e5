use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use imce_cli::commands::{self, GenKind, OracleSource, RunOptions};
use imce_cli::error::CliError;
use imce_cli::local::default_worker_bin;
use imce_cli::manifest::RunManifest;
use imce_core::compiler::CompileOptions;
use imce_core::mapper::{HwInfo, Strategy};
use imce_core::{AccelClass, NoiseModel};

#[derive(Parser)]
#[command(name = "imce", version, about = "In-memory-computing cluster emulator")]
struct Cli {
    /// Seed for synthetic calibration and generated data.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// env_logger filter, e.g. `info` or `imce_runtime=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Class {
    An,
    Di,
}

impl From<Class> for AccelClass {
    fn from(c: Class) -> Self {
        match c {
            Class::An => AccelClass::An,
            Class::Di => AccelClass::Di,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize, fuse, quantize and lower a model.
    Compile {
        #[arg(long)]
        model: PathBuf,
        /// Calibration tensor set; seeded random samples otherwise.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Accelerator class for average pooling.
        #[arg(long, value_enum, default_value = "an")]
        avgpool_on: Class,
    },
    /// Assign compiled nodes to boards and write the deployment configs.
    Map {
        #[arg(long)]
        compiled: PathBuf,
        #[arg(long)]
        hw: PathBuf,
        #[arg(long, default_value = "loadbalance")]
        strategy: Strategy,
        /// Noise spec such as `sigma_prog=0.05,sigma_read=0.01,seed=3`.
        #[arg(long, default_value = "none")]
        noise: NoiseModel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compile, map and run a manifest on the cluster.
    Run(RunArgs),
    /// Sequential reference outputs for a tensor set.
    Oracle {
        #[arg(long, conflicts_with = "model", required_unless_present = "model")]
        compiled: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Unquantized FP32 reference (needs --model).
        #[arg(long)]
        fp32: bool,
        #[arg(long, default_value = "none")]
        noise: NoiseModel,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize per-board statistics files.
    Stats {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Write a built-in model and a matching input set.
    Gen {
        #[arg(value_enum)]
        kind: GenKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        count: usize,
    },
    /// Write a hardware description with uniform boards.
    Hw {
        #[arg(long)]
        an: usize,
        #[arg(long)]
        di: usize,
        #[arg(long, default_value_t = 8)]
        fthreads: usize,
        #[arg(long, default_value_t = 8)]
        sthreads: usize,
        #[arg(long, default_value_t = 7000)]
        base_port: u16,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Start one local worker process per board.
    #[arg(long)]
    local: bool,
    #[arg(long)]
    worker_bin: Option<PathBuf>,
    /// Per-board connection timeout in seconds.
    #[arg(long, default_value_t = 10.0)]
    timeout_s: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Compile {
            model,
            calibration,
            out,
            avgpool_on,
        } => {
            let opts = CompileOptions {
                avgpool_on: avgpool_on.into(),
                ..Default::default()
            };
            let r = commands::cmd_compile(&model, calibration.as_deref(), &out, seed, &opts)?;
            print!("{}", r.render());
            println!("wrote {} files to {}", r.files.len(), out.display());
        }
        Cmd::Map {
            compiled,
            hw,
            strategy,
            noise,
            out,
        } => {
            let r = commands::cmd_map(&compiled, &hw, strategy, &noise, &out)?;
            print!("{}", r.render());
        }
        Cmd::Run(a) => {
            let m = RunManifest::load(&a.manifest)?;
            if !(a.timeout_s > 0.0 && a.timeout_s.is_finite()) {
                return Err(CliError::validation("--timeout-s must be positive"));
            }
            let opts = RunOptions {
                out: a.out.clone(),
                local: a.local,
                worker_bin: a.worker_bin.unwrap_or_else(default_worker_bin),
                timeout: Duration::from_secs_f64(a.timeout_s),
            };
            std::fs::create_dir_all(&opts.out)?;
            let r = commands::cmd_run(&m, &opts)?;
            print!("{}", r.render());
        }
        Cmd::Oracle {
            compiled,
            model,
            input,
            fp32,
            noise,
            out,
        } => {
            let src = match (&compiled, &model) {
                (Some(c), _) => OracleSource::Compiled(c),
                (None, Some(m)) => OracleSource::Model(m),
                (None, None) => return Err(CliError::validation("need --compiled or --model")),
            };
            let records = commands::cmd_oracle(src, &input, fp32, &noise, seed)?;
            let text = serde_json::to_string_pretty(&records).map_err(|e| CliError::new(1, e))?;
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
        }
        Cmd::Stats { dir } => print!("{}", commands::cmd_stats(&dir)?),
        Cmd::Gen {
            kind,
            out,
            inputs,
            count,
        } => {
            let g = commands::cmd_gen(kind, seed, count)?;
            commands::write_gen(&g, &out, inputs.as_deref())?;
            if !g.note.is_empty() {
                println!("{}", g.note);
            }
            println!("wrote {}", out.display());
        }
        Cmd::Hw {
            an,
            di,
            fthreads,
            sthreads,
            base_port,
            out,
        } => {
            let hw = HwInfo::uniform(an, di, fthreads, sthreads, base_port);
            hw.validate()?;
            let text = serde_json::to_string_pretty(&hw).map_err(|e| CliError::new(1, e))?;
            std::fs::write(&out, text + "\n")?;
            println!("wrote {} boards to {}", hw.boards.len(), out.display());
        }
    }
    Ok(())
}
