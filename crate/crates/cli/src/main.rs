//! `dyncomp`: compile LOOP programs to dynamical systems, run them, verify the
//! bundled suite and exhibit impossibility witnesses.
//!
//! Exit codes: 0 success; 1 a check failed or a backend contract was
//! violated; 2 an input file is missing or unreadable, or the command line is
//! malformed.

mod opts;
mod run;
mod suite;
mod witness;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use opts::{BackendOpts, Format};

#[derive(Parser)]
#[command(name = "dyncomp", version, about = "LOOP programs as dynamical systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serialize one backend's compiled form as JSON.
    Compile {
        #[arg(long, value_enum)]
        backend: opts::CompileBackend,
        program: PathBuf,
        #[command(flatten)]
        opts: BackendOpts,
        /// Output path; `-` writes to stdout. Defaults to `<stem>.<backend>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a program on one input with one or all backends.
    Run {
        #[arg(long, value_enum, default_value = "all")]
        backend: opts::RunBackend,
        program: PathBuf,
        input: Vec<u64>,
        #[command(flatten)]
        opts: BackendOpts,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check every backend over a suite manifest.
    Verify {
        suite: PathBuf,
        #[command(flatten)]
        opts: BackendOpts,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certificates for one input without integrating: T, B, s0, τ, majorants, S and N.
    Bounds {
        program: PathBuf,
        input: Vec<u64>,
        #[command(flatten)]
        opts: BackendOpts,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhibit a violation for a candidate rounder or selector, or iterate σ.
    Witness {
        #[command(subcommand)]
        kind: witness::Kind,
        #[arg(long, value_enum, default_value = "json", global = true)]
        format: Format,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

/// Why a command stopped.
pub enum Failure {
    /// Missing or unreadable input (exit 2).
    Input(String),
    /// A check or contract failed (exit 1).
    Check(String),
}

impl From<dyncomp::Error> for Failure {
    fn from(e: dyncomp::Error) -> Self {
        Failure::Check(e.to_string())
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

pub fn read_file(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Failure::Input(format!("file not found: {}", path.display())),
        _ => Failure::Input(format!("cannot read {}: {e}", path.display())),
    })
}

/// Writes to `out`, or stdout when absent or `-`.
pub fn emit(text: &str, out: Option<&Path>) -> CmdResult<()> {
    match out {
        Some(p) if p != Path::new("-") => {
            std::fs::write(p, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", p.display())))
        }
        _ => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult<bool> {
    match cli.cmd {
        Cmd::Compile { backend, program, opts, out } => {
            run::compile(backend, &program, &opts, out.as_deref()).map(|_| true)
        }
        Cmd::Run { backend, program, input, opts, format, out } => {
            run::run(backend, &program, &input, &opts, format, out.as_deref()).map(|_| true)
        }
        Cmd::Verify { suite, opts, format, out } => suite::verify(&suite, &opts, format, out.as_deref()),
        Cmd::Bounds { program, input, opts, format, out } => {
            run::bounds(&program, &input, &opts, format, out.as_deref()).map(|_| true)
        }
        Cmd::Witness { kind, format, out } => witness::witness(kind, format, out.as_deref()).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
