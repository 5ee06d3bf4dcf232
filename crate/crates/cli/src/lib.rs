//! Reproducible experiment runner: config files in, JSON-lines reports out.

pub mod config;
pub mod experiments;
pub mod report;

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

pub use config::{Diagnostic, ExperimentConfig, ExperimentKind};
pub use report::{Check, Outcome, Record, Written};

/// Failure of a CLI action, mapped onto the process exit code.
#[derive(Debug)]
pub enum RunError {
    Validation(Vec<Diagnostic>),
    Numerical(loopgap_core::Error),
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Numerical(_) => 3,
            Self::Io { .. } => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(diags) => {
                write!(f, "invalid configuration ({} problem(s))", diags.len())?;
                for d in diags {
                    write!(f, "\n  {d}")?;
                }
                Ok(())
            }
            Self::Numerical(e) => write!(f, "numerical abort: {e}"),
            Self::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for RunError {}

impl From<loopgap_core::Error> for RunError {
    fn from(e: loopgap_core::Error) -> Self {
        Self::Numerical(e)
    }
}

/// Reads and parses a config file (no constraint checks).
pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let src = fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::parse(&src).map_err(RunError::Validation)
}

/// Parse plus full validation of a config file.
pub fn validate_file(path: &Path) -> Result<ExperimentConfig, RunError> {
    let cfg = load_config(path)?;
    let diags = cfg.validate();
    if diags.is_empty() {
        Ok(cfg)
    } else {
        Err(RunError::Validation(diags))
    }
}

/// Validates, runs and writes `report.jsonl`, `summary.txt` and CSV dumps
/// into `config.output.dir`.
pub fn run(config: &ExperimentConfig) -> Result<(Outcome, Written), RunError> {
    let diags = config.validate();
    if !diags.is_empty() {
        return Err(RunError::Validation(diags));
    }
    let resolved = config.resolved();
    let outcome = experiments::run_experiment(&resolved)?;
    let dir = resolved.output.dir.clone();
    let written = report::write_outputs(&dir, &resolved, &outcome)
        .map_err(|source| RunError::Io { path: dir, source })?;
    Ok((outcome, written))
}
