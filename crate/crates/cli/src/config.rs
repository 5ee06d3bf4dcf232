//! Experiment configuration: TOML parsing, defaults and full validation.

use std::fmt;
use std::path::PathBuf;

use loopgap_core::hjb::{required_time_steps, Boundary, HjbGrid};
use loopgap_core::{RelaxedPayoffConfig, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::experiments::benchmark_problem;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    TsirelsonGap,
    Uniformity,
    RecursionCheck,
    GirsanovCheck,
    QvRecovery,
    HjbBenchmark,
    EquivalenceTriangle,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::TsirelsonGap,
        Self::Uniformity,
        Self::RecursionCheck,
        Self::GirsanovCheck,
        Self::QvRecovery,
        Self::HjbBenchmark,
        Self::EquivalenceTriangle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::TsirelsonGap => "tsirelson-gap",
            Self::Uniformity => "uniformity",
            Self::RecursionCheck => "recursion-check",
            Self::GirsanovCheck => "girsanov-check",
            Self::QvRecovery => "qv-recovery",
            Self::HjbBenchmark => "hjb-benchmark",
            Self::EquivalenceTriangle => "equivalence-triangle",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::TsirelsonGap => {
                "closed-loop value vs. open-loop probe envelope on the Tsirelson problem"
            }
            Self::Uniformity => {
                "KS test of the fractional increments eta_k of the closed-loop solution"
            }
            Self::RecursionCheck => "extend_alpha_k residuals and alpha^n / alpha^k consistency",
            Self::GirsanovCheck => {
                "reweighted vs. direct values on six (lambda, g) pairs; projection refinement"
            }
            Self::QvRecovery => {
                "simulate / recover B / re-simulate round trips and realized variance"
            }
            Self::HjbBenchmark => "HJB solver against closed-form and degenerate oracles",
            Self::EquivalenceTriangle => {
                "HJB value, feedback MC value and open-loop envelope on a state-dependent problem"
            }
        }
    }

    /// Path count used when the config does not set one.
    pub fn default_paths(self) -> usize {
        match self {
            Self::TsirelsonGap | Self::Uniformity => 10_000,
            Self::RecursionCheck | Self::QvRecovery => 100,
            Self::GirsanovCheck | Self::EquivalenceTriangle => 100_000,
            Self::HjbBenchmark => 0,
        }
    }

    fn uses_hjb(self) -> bool {
        matches!(self, Self::HjbBenchmark | Self::EquivalenceTriangle)
    }

    fn uses_mc(self) -> bool {
        self != Self::HjbBenchmark
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Horizon `T`.
    pub horizon: f64,
    /// Number of coarse levels `K`.
    pub levels: usize,
    /// Geometric ratio `r`.
    pub ratio: f64,
    /// Euler steps per coarse interval `m`.
    pub substeps: usize,
    /// Steps of the uniform grid used by state-dependent problems.
    pub uniform_steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            levels: 20,
            ratio: 0.5,
            substeps: 4,
            uniform_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    pub n_paths: Option<usize>,
    pub master_seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: None,
            master_seed: 20_240_601,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelaxationConfig {
    /// L1 tolerance `eps`; defaults to `1e-3 * T`.
    pub epsilon: Option<f64>,
    /// Derivative window `h`; defaults to the smallest Euler step.
    pub window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbConfig {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// Number of evenly spaced actions sampled from `A`.
    pub action_resolution: usize,
    pub boundary: Boundary,
}

impl Default for HjbConfig {
    fn default() -> Self {
        Self {
            x_lo: -7.0,
            x_hi: 7.0,
            n_x: 701,
            n_t: 2600,
            action_resolution: 21,
            boundary: Boundary::DirichletFromG,
        }
    }
}

impl HjbConfig {
    pub fn grid(&self) -> HjbGrid {
        HjbGrid {
            x_lo: self.x_lo,
            x_hi: self.x_hi,
            n_x: self.n_x,
            n_t: self.n_t,
            boundary: self.boundary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    /// Levels `k` whose fractional increments are tested for uniformity.
    pub uniformity_levels: Vec<i64>,
    /// Deepest level used in the `alpha^n` / `alpha^k` consistency pairs.
    pub consistency_depth: i64,
    /// Trailing window (in steps) of the realized-variance estimate.
    pub qv_window: usize,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            uniformity_levels: vec![-1, -5, -10],
            consistency_depth: -10,
            qv_window: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write the optional CSV dumps.
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            csv: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub relaxation: RelaxationConfig,
    #[serde(default)]
    pub hjb: HjbConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// One validation finding, tied to a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before
        .rfind('\n')
        .map_or(before.len(), |p| before.len() - p - 1)
        + 1;
    (line, col)
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: kind,
            grid: GridConfig::default(),
            mc: McConfig::default(),
            relaxation: RelaxationConfig::default(),
            hjb: HjbConfig::default(),
            checks: ChecksConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parses TOML; errors carry the line and column of the offending token.
    pub fn parse(src: &str) -> Result<Self, Vec<Diagnostic>> {
        toml::from_str(src).map_err(|e: toml::de::Error| {
            let field = match e.span() {
                Some(span) => {
                    let (line, col) = line_col(src, span.start);
                    format!("line {line}, column {col}")
                }
                None => "config".to_string(),
            };
            vec![Diagnostic::new(field, e.message().trim().to_string())]
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Fills every optional knob with its resolved value.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.mc.n_paths.is_none() {
            cfg.mc.n_paths = Some(cfg.experiment.default_paths());
        }
        if let Ok(grid) = self.tsirelson_grid() {
            let d = RelaxedPayoffConfig::for_grid(&grid);
            cfg.relaxation.epsilon.get_or_insert(d.tolerance);
            cfg.relaxation.window.get_or_insert(d.window);
        }
        cfg
    }

    pub fn n_paths(&self) -> usize {
        self.mc
            .n_paths
            .unwrap_or_else(|| self.experiment.default_paths())
    }

    pub fn tsirelson_grid(&self) -> loopgap_core::Result<TimeGrid> {
        let g = &self.grid;
        TimeGrid::tsirelson(g.horizon, g.levels, g.ratio, g.substeps)
    }

    pub fn uniform_grid(&self) -> loopgap_core::Result<TimeGrid> {
        TimeGrid::uniform(self.grid.horizon, self.grid.uniform_steps)
    }

    pub fn relaxation_config(&self, grid: &TimeGrid) -> loopgap_core::Result<RelaxedPayoffConfig> {
        let d = RelaxedPayoffConfig::for_grid(grid);
        RelaxedPayoffConfig::new(
            grid,
            self.relaxation.window.unwrap_or(d.window),
            self.relaxation.epsilon.unwrap_or(d.tolerance),
        )
    }

    /// Every constraint violation, in field order. Empty means valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(Diagnostic::new(
                "schema_version",
                format!(
                    "unsupported version {}; expected {SCHEMA_VERSION}",
                    self.schema_version
                ),
            ));
        }

        let g = &self.grid;
        let mut grid_ok = true;
        if !(g.horizon > 0.0 && g.horizon.is_finite()) {
            out.push(Diagnostic::new(
                "grid.horizon",
                "T must be positive and finite",
            ));
            grid_ok = false;
        }
        if g.levels < 2 {
            out.push(Diagnostic::new(
                "grid.levels",
                format!("K >= 2 is required, got {}", g.levels),
            ));
            grid_ok = false;
        }
        if !(g.ratio > 0.0 && g.ratio < 1.0) {
            out.push(Diagnostic::new(
                "grid.ratio",
                format!("r must lie in (0, 1), got {}", g.ratio),
            ));
            grid_ok = false;
        }
        if g.substeps < 1 {
            out.push(Diagnostic::new("grid.substeps", "m >= 1 is required"));
            grid_ok = false;
        }
        if g.uniform_steps < 1 {
            out.push(Diagnostic::new(
                "grid.uniform_steps",
                "at least one step is required",
            ));
        }
        let grid = if grid_ok {
            match self.tsirelson_grid() {
                Ok(grid) => Some(grid),
                Err(e) => {
                    out.push(Diagnostic::new("grid", e.to_string()));
                    None
                }
            }
        } else {
            None
        };

        if self.experiment.uses_mc() {
            if let Some(n) = self.mc.n_paths {
                if n < 2 {
                    out.push(Diagnostic::new(
                        "mc.n_paths",
                        "at least 2 paths are required",
                    ));
                }
            }
        }

        if let Some(eps) = self.relaxation.epsilon {
            if eps == 0.0 {
                out.push(Diagnostic::new(
                    "relaxation.epsilon",
                    "epsilon = 0 makes the relaxed payoff the exact-zero indicator, which is degenerate under discretization; use a positive tolerance",
                ));
            } else if !(eps > 0.0 && eps.is_finite()) {
                out.push(Diagnostic::new(
                    "relaxation.epsilon",
                    format!("must be positive, got {eps}"),
                ));
            }
        }
        if let (Some(h), Some(grid)) = (self.relaxation.window, &grid) {
            if !(h.is_finite() && h >= grid.euler_step() * (1.0 - 1e-12)) {
                out.push(Diagnostic::new(
                    "relaxation.window",
                    format!("h must be at least one Euler step ({})", grid.euler_step()),
                ));
            }
        }

        if grid_ok {
            for &k in &self.checks.uniformity_levels {
                if !(-(g.levels as i64) + 1..=-1).contains(&k) {
                    out.push(Diagnostic::new(
                        "checks.uniformity_levels",
                        format!("level {k} outside [-{}, -1]", g.levels - 1),
                    ));
                }
            }
            let depth = self.checks.consistency_depth;
            if !(-(g.levels as i64) + 1..=-2).contains(&depth) {
                out.push(Diagnostic::new(
                    "checks.consistency_depth",
                    format!("must lie in [-{}, -2], got {depth}", g.levels - 1),
                ));
            }
        }
        if self.checks.qv_window < 1 {
            out.push(Diagnostic::new(
                "checks.qv_window",
                "window must be at least one step",
            ));
        }

        if self.experiment.uses_hjb() {
            self.validate_hjb(&mut out);
        }
        if self.output.dir.as_os_str().is_empty() {
            out.push(Diagnostic::new("output.dir", "must not be empty"));
        }
        out
    }

    fn validate_hjb(&self, out: &mut Vec<Diagnostic>) {
        let h = &self.hjb;
        let mut ok = true;
        if !(h.x_lo < 0.0 && 0.0 < h.x_hi && h.x_lo.is_finite() && h.x_hi.is_finite()) {
            out.push(Diagnostic::new("hjb.x_lo", "need x_lo < x0 = 0 < x_hi"));
            ok = false;
        }
        if h.n_x < 3 {
            out.push(Diagnostic::new(
                "hjb.n_x",
                format!("n_x >= 3 is required, got {}", h.n_x),
            ));
            ok = false;
        }
        if h.n_t < 1 {
            out.push(Diagnostic::new("hjb.n_t", "n_t >= 1 is required"));
            ok = false;
        }
        if h.action_resolution < 2 {
            out.push(Diagnostic::new(
                "hjb.action_resolution",
                "at least 2 actions are required",
            ));
            ok = false;
        }
        if !(self.grid.horizon > 0.0 && self.grid.horizon.is_finite()) {
            ok = false;
        }
        if ok {
            let problem = benchmark_problem(self.grid.horizon, 1.0, |x| x);
            let actions = problem.actions.sample(h.action_resolution);
            let required = required_time_steps(&problem, &h.grid(), &actions);
            if h.n_t < required {
                out.push(Diagnostic::new(
                    "hjb.n_t",
                    format!("n_t = {} violates the explicit-scheme stability bound; use n_t >= {required}", h.n_t),
                ));
            }
        }
    }
}
