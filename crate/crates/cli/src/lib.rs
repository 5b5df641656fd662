//! Batch front end for `ergolab-core`: loads scenario files, runs one
//! computation and renders a deterministic JSON or CSV report.

pub mod commands;
pub mod scenario;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ergolab_core::Error;
use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Budget(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BudgetExceeded { .. } => CliError::Budget(e.to_string()),
            Error::Invariant(_) | Error::InvarianceViolated { .. } => CliError::Invariant(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Default)]
pub struct Flags {
    /// Scenario file.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Directory for report files; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    pub format: Format,
    /// Overrides the scenario's base-point seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Extension steps for `extend` and `pleasant`.
    #[arg(long = "max-m", global = true)]
    pub max_m: Option<usize>,
    /// Cap on enumerated tuples before a command gives up with exit 2.
    #[arg(long, global = true)]
    pub budget: Option<usize>,
    /// Overrides the scenario's base-point trial count.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Check the system and observables.
    Validate,
    /// Truncated averages against exact limits and deviation bounds.
    Avg,
    /// Exact limits and the van der Corput identity.
    Limit,
    /// The Furstenberg self-joining.
    Joining,
    /// The Host–Kra tower.
    Hk,
    /// Iterate the one-step extension until pleasant.
    Extend,
    /// Pleasantness defect, optionally after `--max-m` extension steps.
    Pleasant,
    /// Convergence table for a torus scenario.
    TorusDemo,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Avg => "avg",
            Command::Limit => "limit",
            Command::Joining => "joining",
            Command::Hk => "hk",
            Command::Extend => "extend",
            Command::Pleasant => "pleasant",
            Command::TorusDemo => "torus-demo",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ergolab",
    version,
    about = "Exact nonconventional ergodic averages on finite systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

/// A rendered report and the file name it is written under.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub file_name: String,
    pub body: String,
}

/// Wraps a command result with the scenario identity.
pub fn envelope(command: Command, loaded: &scenario::Loaded, result: Value) -> Value {
    json!({
        "command": command.name(),
        "engine_version": ergolab_core::VERSION,
        "scenario": loaded.scenario.name,
        "scenario_sha256": loaded.hash,
        "result": result,
    })
}

pub fn run(command: Command, flags: &Flags) -> Result<Report, CliError> {
    let path = flags
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Validation("--scenario is required".into()))?;
    let loaded = scenario::load(path)?;
    run_loaded(command, flags, &loaded)
}

pub fn run_loaded(command: Command, flags: &Flags, loaded: &scenario::Loaded) -> Result<Report, CliError> {
    let output = commands::dispatch(command, flags, loaded)?;
    let (ext, body) = match (flags.format, output) {
        (Format::Json, commands::Output { json, .. }) => {
            let v = envelope(command, loaded, json);
            (
                "json",
                serde_json::to_string_pretty(&v).expect("reports serialize") + "\n",
            )
        }
        (Format::Csv, commands::Output { csv: Some(csv), .. }) => ("csv", csv),
        (Format::Csv, _) => {
            return Err(CliError::Validation(format!(
                "{} has no CSV form",
                command.name()
            )))
        }
    };
    Ok(Report {
        file_name: format!("{}.{}.{ext}", loaded.scenario.name, command.name()),
        body,
    })
}

/// Writes to `out/<file_name>` or prints.
pub fn emit(report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
            let path = dir.join(&report.file_name);
            std::fs::write(&path, &report.body)
                .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout
                .write_all(report.body.as_bytes())
                .and_then(|_| stdout.flush())
            {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(CliError::Validation(format!("cannot write to stdout: {e}")))
                }
                _ => Ok(()),
            }
        }
    }
}
