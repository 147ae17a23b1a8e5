//! Board daemon: serves one emulated FPGA over TCP.

use std::io::Write;
use std::net::TcpListener;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use imce_core::AccelClass;
use imce_runtime::WorkerOptions;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Role {
    An,
    Di,
}

#[derive(Parser)]
#[command(name = "imce-worker", version, about = "Emulated FPGA board")]
struct Args {
    /// Address to listen on; port 0 picks a free port.
    #[arg(long, default_value = "127.0.0.1:0")]
    listen: String,
    #[arg(long, value_enum)]
    role: Role,
    /// Maximum number of F-threads (hosted nodes).
    #[arg(long, default_value_t = 64)]
    threads: usize,
    #[arg(long, default_value = "warn")]
    log_level: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    env_logger::Builder::new()
        .parse_filters(&args.log_level)
        .target(env_logger::Target::Stderr)
        .init();
    let listener = match TcpListener::bind(&args.listen) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", args.listen);
            return ExitCode::from(1);
        }
    };
    let addr = listener.local_addr().expect("bound socket has an address");
    // the launcher reads exactly this line
    println!("listening on {addr}");
    let _ = std::io::stdout().flush();
    let opts = WorkerOptions {
        role: match args.role {
            Role::An => AccelClass::An,
            Role::Di => AccelClass::Di,
        },
        threads: args.threads,
    };
    match imce_runtime::worker::serve(listener, opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
