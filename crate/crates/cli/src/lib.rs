//! `polling-lab`: reads a JSON run configuration, runs one command against
//! the polling core, and writes `report.txt`, `results.csv` and
//! `plotdata/` to an output directory.
//!
//! Exit codes: 0 ok, 2 configuration error, 3 instability, 4 validation
//! failure, 5 runtime error.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};

pub use commands::{Outcome, Status};
pub use config::RunConfig;

pub const TOOL_VERSION: &str = concat!("polling-lab ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_OUT_DIR: &str = "polling-lab-out";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Instability(String),
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Instability(_) => 3,
            CliError::Validation(_) => 4,
            CliError::Runtime(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Instability(m) => write!(f, "{m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Evaluate,
    Discretize,
    Simulate,
    Validate,
    Optimize,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Evaluate => "evaluate",
            Command::Discretize => "discretize",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::Optimize => "optimize",
            Command::Sweep => "sweep",
        }
    }
}

/// Parses a configuration file; parse errors carry line and column.
pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Runs `command` on an already loaded configuration, with the optional
/// seed override applied first.
pub fn execute(command: Command, config: &RunConfig, seed: Option<u64>) -> Result<(RunConfig, Outcome), CliError> {
    let mut cfg = config.clone();
    if seed.is_some() {
        cfg.numeric.seed = seed;
    }
    commands::check_numeric(&cfg)?;
    let outcome = match command {
        Command::Evaluate => commands::cmd_evaluate(&cfg),
        Command::Discretize => commands::cmd_discretize(&cfg),
        Command::Simulate => commands::cmd_simulate(&cfg),
        Command::Validate => commands::cmd_validate(&cfg),
        Command::Optimize => commands::cmd_optimize(&cfg),
        Command::Sweep => commands::cmd_sweep(&cfg),
    }?;
    Ok((cfg, outcome))
}

pub fn preamble(command: Command, cfg: &RunConfig) -> Vec<String> {
    vec![
        TOOL_VERSION.to_string(),
        format!("command: {}", command.name()),
        format!("config_hash: sha256:{}", cfg.hash()),
    ]
}

/// Output directory: the explicit override, else the configured one, else
/// [`DEFAULT_OUT_DIR`].
pub fn output_dir(cfg: &RunConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Full pipeline: load, run, write. Returns the report text (for echoing)
/// and the process exit code.
pub fn run(command: Command, config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> (String, Result<(), CliError>) {
    let result = (|| {
        let cfg = load_config(config_path)?;
        let (cfg, outcome) = execute(command, &cfg, seed)?;
        let dir = output_dir(&cfg, out);
        let pre = preamble(command, &cfg);
        outcome
            .artifacts
            .write(&dir, &pre)
            .map_err(|e| CliError::Runtime(format!("cannot write to {}: {e}", dir.display())))?;
        let mut text = pre.join("\n");
        text.push_str("\n\n");
        text.push_str(&outcome.artifacts.report.join("\n"));
        let status = match outcome.status {
            Status::Ok => Ok(()),
            Status::Unstable(m) => Err(CliError::Instability(m)),
            Status::Failed(m) => Err(CliError::Validation(m)),
        };
        Ok((text, status))
    })();
    match result {
        Ok((text, status)) => (text, status),
        Err(e) => (String::new(), Err(e)),
    }
}

pub fn exit_code(result: &Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    }
}
