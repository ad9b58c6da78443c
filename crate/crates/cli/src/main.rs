use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use polling_lab::{exit_code, run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Evaluate,
    Discretize,
    Simulate,
    Validate,
    Optimize,
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Discretize => Command::Discretize,
            Cmd::Simulate => Command::Simulate,
            Cmd::Validate => Command::Validate,
            Cmd::Optimize => Command::Optimize,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

/// Evaluate, discretize, simulate and optimize mixed polling systems.
#[derive(Debug, Parser)]
#[command(name = "polling-lab", version)]
struct Args {
    command: Cmd,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides numeric.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Do not echo the report.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (text, result) = run(args.command.into(), &args.config, args.out.as_deref(), args.seed);
    if !args.quiet && !text.is_empty() {
        println!("{text}");
    }
    if let Err(e) = &result {
        eprintln!("polling-lab: {e}");
    }
    ExitCode::from(exit_code(&result) as u8)
}
