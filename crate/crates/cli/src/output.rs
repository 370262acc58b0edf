//! Run directory files: the trace CSV, the JSON summary and their preambles.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use calabi_core::energy::{DecayFit, EnergyLedger, EnergySample, MonotonicityCheck};
use calabi_core::flow::{FlowFailure, RunStats};
use serde::{Deserialize, Serialize};

use crate::{ExitStatus, RunError, FORMAT_VERSION};

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Key/value lines written as `# key=value` above the CSV header.
pub fn preamble(config_hash: &str, seed: u64, eps_step: f64) -> Vec<String> {
    vec![
        format!("format_version={FORMAT_VERSION}"),
        format!("config_hash={config_hash}"),
        format!("seed={seed}"),
        format!("eps_step={eps_step}"),
    ]
}

pub fn write_trace(path: &Path, ledger: &EnergyLedger, preamble: &[String]) -> Result<(), RunError> {
    write_text(path, &ledger.to_csv(preamble))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| RunError::Io(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    t: f64,
    area: f64,
    calabi: f64,
    mabuchi_closed: f64,
    mabuchi_integrated: f64,
    liouville: f64,
    gradk: f64,
    lambda1: Option<f64>,
    kw_residual: Option<f64>,
    dt: f64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub preamble: BTreeMap<String, String>,
    pub samples: Vec<EnergySample>,
}

impl Trace {
    pub fn eps_step(&self) -> Option<f64> {
        self.preamble.get("eps_step").and_then(|v| v.parse().ok())
    }
}

/// Reads a trace written by [`write_trace`]. Tail increments are recomputed
/// from the Calabi column.
pub fn read_trace(path: &Path) -> Result<Trace, RunError> {
    let text =
        fs::read_to_string(path).map_err(|e| RunError::Config(format!("cannot read trace {}: {e}", path.display())))?;
    let preamble = text
        .lines()
        .map_while(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut samples: Vec<EnergySample> = Vec::new();
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let r = row.map_err(|e| RunError::Config(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let tail_increment = match samples.last() {
            Some(p) => 0.5 * (p.calabi.max(0.0).sqrt() + r.calabi.max(0.0).sqrt()) * (r.t - p.t),
            None => 0.0,
        };
        samples.push(EnergySample {
            t: r.t,
            area: r.area,
            calabi: r.calabi,
            mabuchi_closed: r.mabuchi_closed,
            mabuchi_integrated: r.mabuchi_integrated,
            liouville: r.liouville,
            gradk: r.gradk,
            lambda1: r.lambda1,
            kw_residual: r.kw_residual,
            dt: r.dt,
            tail_increment,
        });
    }
    Ok(Trace { preamble, samples })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult { name: name.to_string(), passed, detail: detail.into() }
    }

    pub fn from_monotonicity(m: &MonotonicityCheck) -> Self {
        let detail = match m.first_violation {
            Some(t) => format!("max increase {:.3e} > {:.1e}, first at t = {t:.6e}", m.max_increase, m.tolerance),
            None => format!("max increase {:.3e} (tolerance {:.1e})", m.max_increase, m.tolerance),
        };
        CheckResult::new(&format!("monotone_{}", m.series), m.passed, detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSummary {
    pub eps: f64,
    pub dim: usize,
    pub eigenvalues: Vec<f64>,
}

/// Summary written at the end of every command, including failed runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub exit_code: i32,
    #[serde(default)]
    pub checks: Vec<CheckResult>,
    #[serde(default)]
    pub final_energies: Option<EnergySample>,
    #[serde(default)]
    pub decay_fit: Option<DecayFit>,
    #[serde(default)]
    pub band: Option<BandSummary>,
    #[serde(default)]
    pub kw_residual: Option<f64>,
    #[serde(default)]
    pub concentration_max: Option<f64>,
    /// `∫ √Ca dt` over the whole run.
    #[serde(default)]
    pub tail_length: Option<f64>,
    #[serde(default)]
    pub stats: Option<RunStats>,
    #[serde(default)]
    pub failure: Option<FlowFailure>,
    #[serde(default)]
    pub last_good_t: Option<f64>,
    /// Command-specific results.
    #[serde(default)]
    pub details: serde_json::Value,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        RunSummary {
            format_version: FORMAT_VERSION,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            status: ExitStatus::Pass.label().to_string(),
            exit_code: 0,
            checks: Vec::new(),
            final_energies: None,
            decay_fit: None,
            band: None,
            kw_residual: None,
            concentration_max: None,
            tail_length: None,
            stats: None,
            failure: None,
            last_good_t: None,
            details: serde_json::Value::Null,
            wall_time_s: 0.0,
        }
    }

    pub fn set_status(&mut self, status: ExitStatus) {
        self.status = status.label().to_string();
        self.exit_code = status.code();
    }
}

pub fn read_summary(path: &Path) -> Result<RunSummary, RunError> {
    let text =
        fs::read_to_string(path).map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| RunError::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))
}
