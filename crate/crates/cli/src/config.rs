//! Experiment configuration files and initial-metric presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use calabi_core::flow::FlowConfig;
use calabi_core::io::{read_field_on, FieldManifest};
use calabi_core::potential::GeodesicOptions;
use calabi_core::surface::{mobius_pullback, random_smooth, MobiusMap};
use calabi_core::{ConformalMetric, SurfaceDescriptor, SurfaceRef, Topology};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    /// Run directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub surface: SurfaceDescriptor,
    /// Initial metric preset, see [`InitialSpec`].
    pub initial: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub geodesic: Option<GeodesicConfig>,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_format_version() -> u32 {
    crate::FORMAT_VERSION
}

fn default_true() -> bool {
    true
}

/// Invariant checks applied to a flow run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    pub monotonicity: bool,
    /// Bound on `|A(t) - A(0)| / A(0)`.
    pub area_drift_max: f64,
    pub expected_alpha: Option<f64>,
    pub alpha_rel_tol: f64,
    pub fit_window: Option<[f64; 2]>,
    pub max_fit_residual: Option<f64>,
    pub final_band_dim: Option<usize>,
    pub max_final_kw: Option<f64>,
    /// Scan the final metric for concentration at this radius.
    pub concentration_eps: Option<f64>,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            monotonicity: true,
            area_drift_max: 1e-6,
            expected_alpha: None,
            alpha_rel_tol: 0.05,
            fit_window: None,
            max_fit_residual: None,
            final_band_dim: None,
            max_final_kw: None,
            concentration_eps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicConfig {
    /// Start preset; defaults to `initial`.
    #[serde(default)]
    pub from: Option<String>,
    pub to: String,
    /// Constant added to the potential of the `to` endpoint.
    #[serde(default)]
    pub to_offset: f64,
    pub segments: usize,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default)]
    pub options: Option<GeodesicOptions>,
}

fn default_residual_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub k: usize,
    #[serde(default = "default_band_eps")]
    pub band_eps: f64,
    #[serde(default)]
    pub dump_eigenfields: bool,
}

fn default_band_eps() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub eps: f64,
    #[serde(default)]
    pub centers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub seeds: Vec<u64>,
    /// Presets to sweep over; defaults to `initial` alone.
    #[serde(default)]
    pub initials: Vec<String>,
    #[serde(default)]
    pub threads: Option<usize>,
}

/// Initial metric presets:
///
/// * `flat`, `round`: the background metric
/// * `torus_mode k a`: `u = a cos(2πkx/Lx)`
/// * `sphere_band a`: a fixed combination of first harmonics `x, y, z`
/// * `sphere_zonal a`: `u = a(3z² - 1 + xy)`, orthogonal to the first harmonics
/// * `sphere_bubble λ`: pullback of the round metric by the dilation `z ↦ λz`
/// * `random a`: seeded smooth field with max norm `a`
/// * `field PATH`: a stored field file
///
/// Every preset except `field` is shifted by a constant to the background
/// area.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Flat,
    Round,
    TorusMode { k: u32, a: f64 },
    SphereBand { a: f64 },
    SphereZonal { a: f64 },
    SphereBubble { lambda: f64 },
    Random { a: f64 },
    Field(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetError(pub String);

impl fmt::Display for PresetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for InitialSpec {
    type Err = PresetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split_whitespace().collect();
        let num = |i: usize| -> Result<f64, PresetError> {
            let text = parts.get(i).ok_or_else(|| PresetError(format!("preset `{s}` is missing an argument")))?;
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PresetError(format!("preset `{s}`: `{text}` is not a number")))
        };
        let arity = |n: usize| -> Result<(), PresetError> {
            if parts.len() == n + 1 {
                Ok(())
            } else {
                Err(PresetError(format!("preset `{}` takes {n} argument(s), got {}", parts[0], parts.len() - 1)))
            }
        };
        let Some(&head) = parts.first() else {
            return Err(PresetError("empty initial preset".into()));
        };
        match head {
            "flat" => arity(0).map(|_| InitialSpec::Flat),
            "round" => arity(0).map(|_| InitialSpec::Round),
            "torus_mode" => {
                arity(2)?;
                let k = parts[1]
                    .parse::<u32>()
                    .ok()
                    .filter(|k| *k > 0)
                    .ok_or_else(|| PresetError(format!("torus_mode: `{}` is not a positive integer", parts[1])))?;
                Ok(InitialSpec::TorusMode { k, a: num(2)? })
            }
            "sphere_band" => arity(1).and(num(1)).map(|a| InitialSpec::SphereBand { a }),
            "sphere_zonal" => arity(1).and(num(1)).map(|a| InitialSpec::SphereZonal { a }),
            "sphere_bubble" => {
                arity(1)?;
                let lambda = num(1)?;
                if lambda <= 0.0 {
                    return Err(PresetError("sphere_bubble: dilation must be positive".into()));
                }
                Ok(InitialSpec::SphereBubble { lambda })
            }
            "random" => arity(1).and(num(1)).map(|a| InitialSpec::Random { a }),
            "field" => arity(1).map(|_| InitialSpec::Field(PathBuf::from(parts[1]))),
            other => Err(PresetError(format!("unknown preset `{other}`"))),
        }
    }
}

impl InitialSpec {
    fn topology(&self) -> Option<Topology> {
        match self {
            InitialSpec::Flat | InitialSpec::TorusMode { .. } => Some(Topology::Torus),
            InitialSpec::Round
            | InitialSpec::SphereBand { .. }
            | InitialSpec::SphereZonal { .. }
            | InitialSpec::SphereBubble { .. } => Some(Topology::Sphere),
            InitialSpec::Random { .. } | InitialSpec::Field(_) => None,
        }
    }

    /// Builds the metric; relative field paths resolve against `base_dir`.
    pub fn build(&self, surface: &SurfaceRef, seed: u64, base_dir: &Path) -> Result<ConformalMetric, RunError> {
        if let Some(t) = self.topology() {
            if t != surface.topology() {
                return Err(RunError::Config(format!(
                    "preset needs a {} surface, got a {}",
                    t.name(),
                    surface.topology().name()
                )));
            }
        }
        let numeric = |e: calabi_core::GeometryError| RunError::Numerical(e.to_string());
        let metric = match self {
            InitialSpec::Flat | InitialSpec::Round => return Ok(ConformalMetric::background(surface)),
            InitialSpec::TorusMode { k, a } => {
                let lx = surface.torus_grid().expect("torus").lx();
                let kk = *k as f64;
                ConformalMetric::new(
                    surface
                        .sample_torus(|x, _| a * (2.0 * std::f64::consts::PI * kk * x / lx).cos())
                        .map_err(numeric)?,
                )
            }
            InitialSpec::SphereBand { a } => {
                let n = (1.0f64 + 0.25 + 0.09).sqrt();
                ConformalMetric::new(surface.sample_sphere(|p| a * (p.x + 0.5 * p.y - 0.3 * p.z) / n).map_err(numeric)?)
            }
            InitialSpec::SphereZonal { a } => ConformalMetric::new(
                surface.sample_sphere(|p| a * (3.0 * p.z * p.z - 1.0 + p.x * p.y)).map_err(numeric)?,
            ),
            InitialSpec::SphereBubble { lambda } => {
                mobius_pullback(&ConformalMetric::background(surface), &MobiusMap::dilation(*lambda))
                    .map_err(numeric)?
            }
            InitialSpec::Random { a } => ConformalMetric::new(random_smooth(surface, *a, seed).map_err(numeric)?),
            InitialSpec::Field(path) => {
                let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| RunError::Config(format!("cannot read field {}: {e}", path.display())))?;
                let manifest: FieldManifest =
                    serde_json::from_str(&text).map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
                if manifest.surface_descriptor() != Some(surface.descriptor()) {
                    return Err(RunError::Config(format!("{}: field lives on a different surface", path.display())));
                }
                let u = read_field_on(&path, &manifest, surface).map_err(|e| RunError::Config(e.to_string()))?;
                return Ok(ConformalMetric::new(u));
            }
        };
        Ok(metric.normalized())
    }
}

/// Loaded configuration with its source location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub path: PathBuf,
}

impl LoadedConfig {
    pub fn base_dir(&self) -> &Path {
        self.path.parent().unwrap_or_else(|| Path::new("."))
    }

    /// SHA-256 of the canonical JSON form (after any overrides).
    pub fn hash(&self) -> String {
        config_hash(&self.config)
    }
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Parses a configuration, reporting the line, column and field of any error.
pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig, RunError> {
    let config: ExperimentConfig = serde_json::from_str(text)
        .map_err(|e| RunError::Config(format!("{origin}:{}:{}: {e}", e.line(), e.column())))?;
    validate(&config).map_err(|e| RunError::Config(format!("{origin}: {e}")))?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, RunError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config = parse_config(&text, &path.display().to_string())?;
    Ok(LoadedConfig { config, path: path.to_path_buf() })
}

fn validate(c: &ExperimentConfig) -> Result<(), String> {
    if c.format_version != crate::FORMAT_VERSION {
        return Err(format!(
            "format_version {} is not supported (expected {})",
            c.format_version,
            crate::FORMAT_VERSION
        ));
    }
    let mut presets = vec![("initial", c.initial.as_str())];
    if let Some(g) = &c.geodesic {
        presets.push(("geodesic.to", g.to.as_str()));
        if let Some(f) = &g.from {
            presets.push(("geodesic.from", f.as_str()));
        }
        if g.segments < 2 {
            return Err("geodesic.segments must be at least 2".into());
        }
    }
    if let Some(s) = &c.sweep {
        for p in &s.initials {
            presets.push(("sweep.initials", p.as_str()));
        }
        if s.seeds.is_empty() {
            return Err("sweep.seeds must not be empty".into());
        }
    }
    for (field, p) in presets {
        p.parse::<InitialSpec>().map_err(|e| format!("field `{field}`: {e}"))?;
    }
    if let Some(f) = &c.flow {
        f.validate().map_err(|e| format!("field `flow`: {e}"))?;
    }
    if let Some(s) = &c.spectrum {
        if s.k == 0 {
            return Err("spectrum.k must be at least 1".into());
        }
    }
    Ok(())
}
