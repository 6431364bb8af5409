//! Named, config-driven experiments writing CSV/JSON data and a run manifest.
//!
//! A config is a JSON document:
//!
//! ```json
//! {
//!   "experiment": "acausal-scan",
//!   "energies": [2, 5, 10, 20],
//!   "t_eval": 10,
//!   "tolerances": { "causal": 0.05 },
//!   "output_dir": "out/acausal",
//!   "seed": 7
//! }
//! ```
//!
//! Relative `output_dir` paths are resolved against `$TIMELESS_OUTPUT_ROOT`
//! when it is set.

mod runs;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clock::{ClockKind, ClockModel, TimeGrid};
use crate::error::{Error, Result};
use crate::measurement::InteractionSchedule;

pub const OUTPUT_ROOT_ENV: &str = "TIMELESS_OUTPUT_ROOT";
pub const MANIFEST_NAME: &str = "manifest.json";

pub const EXPERIMENTS: [&str; 10] = [
    "kernel-fig1",
    "first-order-fig2",
    "heatmap-fig3",
    "ideal-equivalence",
    "nonunitarity-scan",
    "acausal-scan",
    "discrete-unitarity",
    "translation-check",
    "kuchar-demo",
    "acceptance-suite",
];

/// Tolerance names and defaults.
pub const TOLERANCES: [(&str, f64); 11] = [
    ("kernel", 1e-8),
    ("probability", 1e-6),
    ("born", 1e-4),
    ("series", 1e-8),
    ("residual", 1e-5),
    ("roundtrip", 1e-4),
    ("norm", 1e-12),
    ("lattice", 1e-8),
    ("translation_ideal", 1e-6),
    ("translation_finite", 1e-3),
    ("causal", 0.05),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSpec {
    pub kind: ClockKind,
    #[serde(rename = "E")]
    pub energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl ClockSpec {
    pub fn build(&self) -> Result<ClockModel> {
        ClockModel::new(self.kind, self.energy, self.dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_min, self.t_max, self.n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<InteractionSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Clock energies for sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energies: Option<Vec<f64>>,
    /// Evaluation time for the expansion-term experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_eval: Option<f64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(experiment: &str, output_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            clock: None,
            schedule: None,
            grid: None,
            tolerances: BTreeMap::new(),
            energies: None,
            t_eval: None,
            output_dir: output_dir.into(),
            seed,
        }
    }

    pub fn tolerance(&self, name: &str) -> f64 {
        self.tolerances.get(name).copied().unwrap_or_else(|| {
            TOLERANCES.iter().find(|(n, _)| *n == name).map(|(_, v)| *v).expect("known tolerance name")
        })
    }

    /// Output directory with the environment override applied.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => Path::new(&root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    /// Dotted config path, e.g. `clock.E`.
    pub path: String,
    pub reason: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

fn diag(path: impl Into<String>, reason: impl Into<String>) -> Diagnostic {
    Diagnostic { path: path.into(), reason: reason.into() }
}

/// Parse a config document, reporting the failing path on error.
pub fn parse_config(text: &str) -> std::result::Result<ExperimentConfig, Diagnostic> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        diag(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })
}

/// Semantic checks on a parsed config.
pub fn check_config(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let name = cfg.experiment.as_str();
    if !EXPERIMENTS.contains(&name) {
        out.push(diag("experiment", format!("unknown experiment '{name}'; valid: {}", EXPERIMENTS.join(", "))));
    }
    if let Some(clock) = &cfg.clock {
        if !(clock.energy > 0.0 && clock.energy.is_finite()) {
            out.push(diag("clock.E", format!("must be positive and finite, got {}", clock.energy)));
        }
        if clock.kind != ClockKind::ContinuumBounded && !matches!(clock.dim, Some(d) if d >= 2) {
            out.push(diag("clock.dim", "finite clocks need dim >= 2"));
        }
        let wanted = match name {
            "ideal-equivalence" | "translation-check" => Some(ClockKind::PeriodicFinite),
            "nonunitarity-scan" | "heatmap-fig3" => Some(ClockKind::ContinuumBounded),
            _ => None,
        };
        if let Some(kind) = wanted {
            if clock.kind != kind {
                out.push(diag("clock.kind", format!("{name} needs a {kind:?} clock")));
            }
        }
        if name == "kuchar-demo" && clock.kind == ClockKind::ContinuumBounded {
            out.push(diag("clock.kind", "kuchar-demo needs a finite clock"));
        }
        if name == "translation-check" && clock.dim.is_some_and(|d| d > 16) {
            out.push(diag("clock.dim", "translation-check is limited to dim <= 16"));
        }
    }
    if let Some(grid) = &cfg.grid {
        if !(grid.t_min.is_finite() && grid.t_max.is_finite() && grid.t_min < grid.t_max) {
            out.push(diag("grid.t_max", "need finite t_min < t_max"));
        }
        if grid.n < 2 {
            out.push(diag("grid.n", "need at least 2 points"));
        }
    }
    for (key, value) in &cfg.tolerances {
        if !TOLERANCES.iter().any(|(n, _)| n == key) {
            out.push(diag(format!("tolerances.{key}"), "unknown tolerance"));
        } else if !(*value > 0.0 && value.is_finite()) {
            out.push(diag(format!("tolerances.{key}"), format!("must be positive, got {value}")));
        }
    }
    if let Some(energies) = &cfg.energies {
        if energies.is_empty() {
            out.push(diag("energies", "empty sweep"));
        }
        for (i, e) in energies.iter().enumerate() {
            if !(*e > 0.0 && e.is_finite()) {
                out.push(diag(format!("energies[{i}]"), format!("must be positive, got {e}")));
            }
        }
    }
    if let Some(schedule) = &cfg.schedule {
        let needs_pair = matches!(name, "acausal-scan" | "heatmap-fig3");
        let windowed = schedule.terms().iter().filter(|t| !t.window.is_delta()).count();
        if needs_pair && windowed < 2 {
            out.push(diag("schedule.terms", format!("{name} needs two windowed terms")));
        }
        if needs_pair && !schedule.windows_disjoint() {
            out.push(diag("schedule.terms", format!("{name} requires disjoint windows")));
        }
        if name == "first-order-fig2" && windowed == 0 {
            out.push(diag("schedule.terms", "first-order-fig2 needs a windowed term"));
        }
        if matches!(name, "nonunitarity-scan" | "translation-check") && schedule.has_delta_terms() {
            out.push(diag("schedule.terms", format!("{name} does not accept delta windows")));
        }
    }
    if let Some(t) = cfg.t_eval {
        if !t.is_finite() {
            out.push(diag("t_eval", "must be finite"));
        }
    }
    out
}

/// Diagnostics for a config file; empty iff it is valid.
pub fn validate_config(path: &Path) -> Vec<Diagnostic> {
    match std::fs::read_to_string(path) {
        Err(e) => vec![diag("<file>", format!("cannot read {}: {e}", path.display()))],
        Ok(text) => match parse_config(&text) {
            Err(d) => vec![d],
            Ok(cfg) => check_config(&cfg),
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pass,
    CheckFailure,
    NonConvergence,
    Error,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Pass => 0,
            RunStatus::CheckFailure | RunStatus::Error => 1,
            RunStatus::NonConvergence => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub artifact_version: String,
    pub wall_time_s: f64,
    pub status: RunStatus,
    pub converged: bool,
    pub checks: Vec<Check>,
    pub outputs: Vec<OutputFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunManifest {
    pub fn passed(&self) -> bool {
        self.status == RunStatus::Pass
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Write `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Accumulates outputs and checks while an experiment runs.
pub(crate) struct Run<'a> {
    cfg: &'a ExperimentConfig,
    pub(crate) root: PathBuf,
    prefix: String,
    outputs: Vec<OutputFile>,
    checks: Vec<Check>,
    converged: bool,
}

impl<'a> Run<'a> {
    fn new(cfg: &'a ExperimentConfig, root: PathBuf) -> Self {
        Self { cfg, root, prefix: String::new(), outputs: Vec::new(), checks: Vec::new(), converged: true }
    }

    pub(crate) fn cfg(&self) -> &ExperimentConfig {
        self.cfg
    }

    pub(crate) fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let rel = format!("{}{name}", self.prefix);
        write_atomic(&self.root.join(&rel), contents.as_bytes())?;
        self.outputs.push(OutputFile { path: rel, sha256: sha256_hex(contents.as_bytes()) });
        Ok(())
    }

    /// Record `value <= threshold`.
    pub(crate) fn below(&mut self, name: &str, value: f64, threshold: f64) {
        self.record(name, value <= threshold, value, threshold, String::new());
    }

    /// Record `value > threshold`.
    pub(crate) fn above(&mut self, name: &str, value: f64, threshold: f64) {
        self.record(name, value > threshold, value, threshold, String::new());
    }

    pub(crate) fn record(&mut self, name: &str, passed: bool, value: f64, threshold: f64, detail: String) {
        self.checks.push(Check { name: format!("{}{name}", self.prefix), passed, value, threshold, detail });
    }

    pub(crate) fn not_converged(&mut self) {
        self.converged = false;
    }
}

/// Run a validated config. Errors during the run are captured in the
/// manifest; the manifest itself is always written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    let diagnostics = check_config(cfg);
    if let Some(d) = diagnostics.first() {
        return Err(Error::InvalidParameter(d.to_string()));
    }
    let root = cfg.resolved_output_dir();
    let start = Instant::now();
    let mut run = Run::new(cfg, root.clone());
    let outcome = runs::dispatch(&mut run);
    let error = outcome.err().map(|e| e.to_string());
    let status = if error.is_some() {
        RunStatus::Error
    } else if !run.converged {
        RunStatus::NonConvergence
    } else if run.checks.iter().all(|c| c.passed) {
        RunStatus::Pass
    } else {
        RunStatus::CheckFailure
    };
    let manifest = RunManifest {
        config: cfg.clone(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_s: start.elapsed().as_secs_f64(),
        status,
        converged: run.converged,
        checks: run.checks,
        outputs: run.outputs,
        error,
    };
    write_atomic(&root.join(MANIFEST_NAME), manifest.to_json().as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reports_paths() {
        let err = parse_config(r#"{"experiment":"kernel-fig1","output_dir":"o","bogus":1}"#).unwrap_err();
        assert!(err.reason.contains("bogus"));
        let err = parse_config(r#"{"experiment":"kernel-fig1","output_dir":"o","clock":{"kind":"continuum_bounded","E":"x"}}"#)
            .unwrap_err();
        assert_eq!(err.path, "clock.E");
    }

    #[test]
    fn semantic_diagnostics() {
        let mut cfg = ExperimentConfig::new("kernel-fig1", "o", 0);
        assert!(check_config(&cfg).is_empty());
        cfg.clock = Some(ClockSpec { kind: ClockKind::ContinuumBounded, energy: -1.0, dim: None });
        let d = check_config(&cfg);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "clock.E");
        cfg.clock = None;
        cfg.experiment = "nope".into();
        assert!(check_config(&cfg)[0].reason.contains("acausal-scan"));
        cfg.experiment = "kernel-fig1".into();
        cfg.tolerances.insert("kernel".into(), 0.0);
        assert_eq!(check_config(&cfg)[0].path, "tolerances.kernel");
    }

    #[test]
    fn tolerance_defaults() {
        let mut cfg = ExperimentConfig::new("kernel-fig1", "o", 0);
        assert_eq!(cfg.tolerance("kernel"), 1e-8);
        cfg.tolerances.insert("kernel".into(), 1e-6);
        assert_eq!(cfg.tolerance("kernel"), 1e-6);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.csv");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
