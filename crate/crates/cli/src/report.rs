//! JSON-lines report, summary table and checksum.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use loopgap_core::mc::{Flags, ValueEstimate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// One estimate or statistic. `mean`/`stderr` carry the primary number; any
/// further diagnostics go into `details` (ordered for byte-stable output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub member: String,
    pub mean: f64,
    pub stderr: f64,
    pub ci95: (f64, f64),
    pub n_paths: usize,
    pub seed: u64,
    pub flags: Flags,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl Record {
    pub fn from_estimate(experiment: &str, member: impl Into<String>, est: &ValueEstimate) -> Self {
        Self {
            experiment: experiment.to_string(),
            member: member.into(),
            mean: est.mean,
            stderr: est.stderr,
            ci95: est.ci95,
            n_paths: est.n_paths,
            seed: est.master_seed,
            flags: est.flags,
            details: BTreeMap::new(),
        }
    }

    /// A deterministic quantity (no sampling error).
    pub fn exact(experiment: &str, member: impl Into<String>, value: f64, seed: u64) -> Self {
        Self::sampled(experiment, member, value, 0.0, 0, seed)
    }

    pub fn sampled(
        experiment: &str,
        member: impl Into<String>,
        mean: f64,
        stderr: f64,
        n_paths: usize,
        seed: u64,
    ) -> Self {
        let half = loopgap_core::mc::Z95 * stderr;
        Self {
            experiment: experiment.to_string(),
            member: member.into(),
            mean,
            stderr,
            ci95: (mean - half, mean + half),
            n_paths,
            seed,
            flags: Flags::default(),
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn detail(&self, key: &str) -> Option<f64> {
        self.details.get(key).copied()
    }
}

/// A named expectation evaluated by an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything an experiment produces before it touches the file system.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub records: Vec<Record>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// `(file name, contents)` of optional CSV dumps.
    pub csv: Vec<(String, String)>,
}

impl Outcome {
    pub fn record(&self, member: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.member == member)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Serialize)]
struct Header<'a> {
    schema_version: u32,
    tool: &'static str,
    version: &'static str,
    config: &'a ExperimentConfig,
}

/// Header line followed by one line per record.
pub fn report_lines(
    config: &ExperimentConfig,
    outcome: &Outcome,
) -> serde_json::Result<(String, String)> {
    let header = serde_json::to_string(&Header {
        schema_version: config.schema_version,
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
    })?;
    let mut body = String::new();
    for r in &outcome.records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    Ok((header + "\n", body))
}

/// SHA-256 of the record lines (the header is excluded so that, e.g., a
/// different output directory does not change the checksum).
pub fn checksum(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn summary_text(config: &ExperimentConfig, outcome: &Outcome, checksum: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", config.experiment);
    let _ = writeln!(s, "master seed: {}", config.mc.master_seed);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<40} {:>14} {:>12} {:>27} {:>9}",
        "member", "mean", "stderr", "ci95", "n_paths"
    );
    for r in &outcome.records {
        let _ = writeln!(
            s,
            "{:<40} {:>14.6} {:>12.6} [{:>12.6}, {:>12.6}] {:>9}",
            r.member, r.mean, r.stderr, r.ci95.0, r.ci95.1, r.n_paths
        );
    }
    if !outcome.checks.is_empty() {
        let _ = writeln!(s);
        for c in &outcome.checks {
            let _ = writeln!(
                s,
                "[{}] {}: {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            );
        }
    }
    for n in &outcome.notes {
        let _ = writeln!(s, "note: {n}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "report checksum (sha256 of record lines): {checksum}");
    s
}

/// Paths of the files written by [`write_outputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct Written {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub csv: Vec<PathBuf>,
    pub checksum: String,
}

pub fn write_outputs(
    dir: &Path,
    config: &ExperimentConfig,
    outcome: &Outcome,
) -> io::Result<Written> {
    fs::create_dir_all(dir)?;
    let (header, body) = report_lines(config, outcome).map_err(io::Error::other)?;
    let sum = checksum(&body);
    let report = dir.join("report.jsonl");
    fs::write(&report, header + &body)?;
    let summary = dir.join("summary.txt");
    fs::write(&summary, summary_text(config, outcome, &sum))?;
    let mut csv = Vec::new();
    if config.output.csv {
        for (name, contents) in &outcome.csv {
            let p = dir.join(name);
            fs::write(&p, contents)?;
            csv.push(p);
        }
    }
    Ok(Written {
        report,
        summary,
        csv,
        checksum: sum,
    })
}
