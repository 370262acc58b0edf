//! Time integration of `∂u/∂t = ½ e^{-2u} Δ₀K`.
//!
//! The leading part of the right-hand side is `-e^{-4u} Δ₀²u`. Each step
//! treats `-c Δ₀²u` with `c = max e^{-4u}` implicitly and the remainder
//! explicitly:
//!
//! ```text
//! (I + dt c Δ₀²) u⁺ = u + dt (F(u) + c Δ₀²u)
//! ```
//!
//! Step size is chosen by step doubling: one full step is compared against
//! two half steps, and the two-half-step result is kept.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyLedger, SpectralColumns};
use crate::error::{GeometryError, IoError, Result};
use crate::io::{decode_f64le, encode_f64le, read_json, write_json, FieldManifest};
use crate::surface::{ConformalMetric, ScalarField, SurfaceDescriptor, SurfaceRef};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Smallest step the controller will try before giving up.
pub const DT_MIN: f64 = 1e-14;

/// Spectral columns computed at every `every`-th sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub every: usize,
    /// Half-width of the band `(1-ε, 1+ε)` (sphere) used for the
    /// Kazdan–Warner projection.
    #[serde(default = "default_band_eps")]
    pub band_eps: f64,
}

fn default_band_eps() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    /// Step-doubling error bound in the max norm of `u`.
    pub eps_step: f64,
    /// Relative area change allowed per unit time within one step.
    pub area_drift_tol: f64,
    pub sample_interval: f64,
    #[serde(default)]
    pub checkpoint_interval: Option<f64>,
    #[serde(default)]
    pub snapshot_interval: Option<f64>,
    #[serde(default)]
    pub diagnostics: Option<DiagnosticsConfig>,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_init", self.dt_init),
            ("dt_max", self.dt_max),
            ("eps_step", self.eps_step),
            ("area_drift_tol", self.area_drift_tol),
            ("sample_interval", self.sample_interval),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GeometryError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(GeometryError::InvalidArgument(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        for (name, v) in
            [("checkpoint_interval", self.checkpoint_interval), ("snapshot_interval", self.snapshot_interval)]
        {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(GeometryError::InvalidArgument(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if let Some(d) = &self.diagnostics {
            if d.every == 0 || !(d.band_eps > 0.0 && d.band_eps < 1.0) {
                return Err(GeometryError::InvalidArgument("diagnostics need every >= 1 and 0 < band_eps < 1".into()));
            }
        }
        Ok(())
    }
}

/// Accept/reject bookkeeping of the step controller.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub last_err: f64,
    pub rejects: u64,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub metric: ConformalMetric,
    /// Step size the controller will try next.
    pub dt: f64,
    pub step_count: u64,
    pub controller: ControllerState,
}

impl FlowState {
    pub fn new(metric: ConformalMetric, dt: f64) -> Self {
        FlowState { t: 0.0, metric, dt, step_count: 0, controller: ControllerState::default() }
    }
}

/// Value of `u` at a snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Stiffness,
    Energy,
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFailure {
    pub kind: FailureKind,
    pub t: f64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub accepted: u64,
    pub rejected: u64,
    pub initial_area: f64,
    /// Largest `|A(t) - A(t₀)| / A(t₀)` over accepted steps.
    pub max_area_drift: f64,
    pub diagnostics_failures: u64,
}

/// Result of a run; on failure everything up to the last accepted step is kept.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub ledger: EnergyLedger,
    pub snapshots: Vec<Snapshot>,
    pub final_state: FlowState,
    pub stats: RunStats,
    pub failure: Option<FlowFailure>,
}

impl FlowTrace {
    pub fn succeeded(&self) -> bool {
        self.failure.is_none()
    }
}

/// Right-hand side `½ e^{-2u} Δ₀K` of the flow.
pub fn flow_velocity(metric: &ConformalMetric) -> Vec<f64> {
    let s = metric.surface();
    let u = metric.u().values();
    let k = crate::surface::gauss_curvature(metric);
    let lk = s.laplace0_values(k.values());
    lk.iter().zip(u).map(|(l, u)| 0.5 * (-2.0 * u).exp() * l).collect()
}

fn advance(metric: &ConformalMetric, dt: f64) -> Result<ConformalMetric> {
    let s = metric.surface();
    let u = metric.u().values();
    let c = u.iter().map(|u| (-4.0 * u).exp()).fold(0.0, f64::max);
    let v = flow_velocity(metric);
    let bih = s.laplace0_values(&s.laplace0_values(u));
    let rhs: Vec<f64> = (0..u.len()).map(|i| u[i] + dt * (v[i] + c * bih[i])).collect();
    if rhs.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::StepFailure("non-finite right-hand side".into()));
    }
    let next = s.solve_biharmonic_shifted(&rhs, dt * c, Some(u))?;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(GeometryError::StepFailure("non-finite solution".into()));
    }
    Ok(ConformalMetric::new(ScalarField::new(s, next)?))
}

/// One IMEX step of size `dt` (no error control).
pub fn step(state: &FlowState, dt: f64) -> Result<FlowState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(GeometryError::InvalidArgument(format!("step size must be positive, got {dt}")));
    }
    if dt < DT_MIN {
        return Err(GeometryError::StiffnessFailure { t: state.t, dt });
    }
    Ok(FlowState {
        t: state.t + dt,
        metric: advance(&state.metric, dt)?,
        dt: state.dt,
        step_count: state.step_count + 1,
        controller: state.controller,
    })
}

struct Attempt {
    metric: ConformalMetric,
    err: f64,
    drift: f64,
}

fn attempt(metric: &ConformalMetric, h: f64) -> Result<Attempt> {
    let full = advance(metric, h)?;
    let half = advance(&advance(metric, 0.5 * h)?, 0.5 * h)?;
    let err = full.u().values().iter().zip(half.u().values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let a0 = metric.area();
    let drift = (half.area() - a0).abs() / a0;
    Ok(Attempt { metric: half, err, drift })
}

/// Periodic event clock with times `k · interval`.
struct Clock {
    interval: f64,
    k: u64,
}

impl Clock {
    /// First tick strictly after `t` (ticks within round-off of `t` count as
    /// already passed).
    fn after(interval: f64, t: f64) -> Self {
        let mut k = (t / interval).floor() as u64;
        while (k as f64) * interval <= t * (1.0 + 1e-12) + 1e-300 {
            k += 1;
        }
        Clock { interval, k }
    }

    fn next(&self) -> f64 {
        self.k as f64 * self.interval
    }

    /// Advances past `t` and reports whether a tick was at `t`.
    fn fire(&mut self, t: f64) -> bool {
        let hit = self.next() <= t;
        while self.next() <= t {
            self.k += 1;
        }
        hit
    }
}

struct Recorder<'a> {
    config: &'a FlowConfig,
    ledger: EnergyLedger,
    samples_taken: usize,
    diagnostics_failures: u64,
}

impl Recorder<'_> {
    fn sample(&mut self, state: &FlowState) -> Result<()> {
        let mut cols = SpectralColumns::default();
        if let Some(d) = &self.config.diagnostics {
            if self.samples_taken.is_multiple_of(d.every) {
                match crate::spectral::flow_diagnostics(&state.metric, d.band_eps) {
                    Ok(c) => cols = c,
                    Err(_) => self.diagnostics_failures += 1,
                }
            }
        }
        self.samples_taken += 1;
        self.ledger.record(state.t, &state.metric, state.dt, cols)?;
        Ok(())
    }
}

/// Runs the flow from `u` at `t = 0`.
pub fn run(initial: ConformalMetric, config: &FlowConfig) -> Result<FlowTrace> {
    run_from(FlowState::new(initial, config.dt_init), config, &mut |_| Ok(()))
}

/// Runs from `state` to `config.t_end`. `on_checkpoint` is called at every
/// checkpoint time; an error from it ends the run.
pub fn run_from(
    state: FlowState,
    config: &FlowConfig,
    on_checkpoint: &mut dyn FnMut(&FlowState) -> Result<(), IoError>,
) -> Result<FlowTrace> {
    config.validate()?;
    if state.t > config.t_end {
        return Err(GeometryError::InvalidArgument(format!("state time {} is past t_end {}", state.t, config.t_end)));
    }
    let mut state = state;
    state.dt = state.dt.min(config.dt_max);
    let initial_area = state.metric.area();
    let mut stats = RunStats { initial_area, ..Default::default() };
    let mut rec = Recorder { config, ledger: EnergyLedger::new(), samples_taken: 0, diagnostics_failures: 0 };
    let mut snapshots = Vec::new();
    let mut failure = None;

    let mut samples = Clock::after(config.sample_interval, state.t);
    let mut checkpoints = config.checkpoint_interval.map(|h| Clock::after(h, state.t));
    let mut snaps = config.snapshot_interval.map(|h| Clock::after(h, state.t));

    rec.sample(&state)?;
    if snaps.is_some() {
        snapshots.push(Snapshot { t: state.t, u: state.metric.u().values().to_vec() });
    }

    while state.t < config.t_end {
        let mut target = config.t_end.min(samples.next());
        if let Some(c) = &checkpoints {
            target = target.min(c.next());
        }
        if let Some(c) = &snaps {
            target = target.min(c.next());
        }
        let remaining = target - state.t;
        let (h, clipped) = if state.dt >= remaining { (remaining, true) } else { (state.dt, false) };

        let outcome = attempt(&state.metric, h);
        let accepted = match outcome {
            Ok(a) if a.err <= config.eps_step && a.drift <= config.area_drift_tol * h => Some(a),
            _ => None,
        };
        let Some(a) = accepted else {
            stats.rejected += 1;
            state.controller.rejects += 1;
            state.dt = 0.5 * h;
            if state.dt < DT_MIN {
                failure = Some(FlowFailure {
                    kind: FailureKind::Stiffness,
                    t: state.t,
                    message: GeometryError::StiffnessFailure { t: state.t, dt: state.dt }.to_string(),
                });
                break;
            }
            continue;
        };

        state.metric = a.metric;
        state.t = if clipped { target } else { state.t + h };
        state.step_count += 1;
        state.controller.last_err = a.err;
        if !clipped {
            state.dt = (1.3 * state.dt).min(config.dt_max);
        }
        stats.accepted += 1;
        stats.max_area_drift = stats.max_area_drift.max((state.metric.area() - initial_area).abs() / initial_area);

        let at_end = state.t >= config.t_end;
        let sample_due = samples.fire(state.t);
        if sample_due || at_end {
            if let Err(e) = rec.sample(&state) {
                failure = Some(FlowFailure { kind: FailureKind::Energy, t: state.t, message: e.to_string() });
                break;
            }
        }
        if snaps.as_mut().is_some_and(|c| c.fire(state.t)) {
            snapshots.push(Snapshot { t: state.t, u: state.metric.u().values().to_vec() });
        }
        if checkpoints.as_mut().is_some_and(|c| c.fire(state.t)) {
            if let Err(e) = on_checkpoint(&state) {
                failure = Some(FlowFailure { kind: FailureKind::Checkpoint, t: state.t, message: e.to_string() });
                break;
            }
        }
    }
    stats.diagnostics_failures = rec.diagnostics_failures;
    Ok(FlowTrace { ledger: rec.ledger, snapshots, final_state: state, stats, failure })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format_version: u32,
    t: f64,
    dt: f64,
    step_count: u64,
    surface: SurfaceDescriptor,
    controller: ControllerState,
    field: FieldManifest,
}

/// Writes `<stem>.json` and `<stem>.bin`; `path` must end in `.json`.
pub fn checkpoint_save(state: &FlowState, path: &Path) -> Result<(), IoError> {
    let payload = path.with_extension("bin");
    let payload_name = payload.file_name().and_then(|n| n.to_str()).unwrap_or("checkpoint.bin").to_string();
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        t: state.t,
        dt: state.dt,
        step_count: state.step_count,
        surface: state.metric.surface().descriptor(),
        controller: state.controller,
        field: FieldManifest::for_surface(state.metric.surface(), "u", &payload_name),
    };
    fs::write(&payload, encode_f64le(state.metric.u().values())).map_err(|e| IoError::io(&payload, e))?;
    write_json(path, &manifest)
}

/// Loads a checkpoint, rebuilding its surface.
pub fn checkpoint_load(path: &Path) -> Result<FlowState, IoError> {
    load_impl(path, None)
}

/// Loads a checkpoint onto an existing surface, which must match the
/// recorded descriptor.
pub fn checkpoint_load_on(path: &Path, surface: &SurfaceRef) -> Result<FlowState, IoError> {
    load_impl(path, Some(surface))
}

fn load_impl(path: &Path, surface: Option<&SurfaceRef>) -> Result<FlowState, IoError> {
    let value: serde_json::Value = read_json(path)?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHECKPOINT_FORMAT_VERSION {
        return Err(IoError::Version { path: path.into(), found, expected: CHECKPOINT_FORMAT_VERSION });
    }
    let m: CheckpointManifest =
        serde_json::from_value(value).map_err(|e| IoError::Manifest { path: path.into(), source: e })?;
    let corrupt = |detail: String| IoError::Corrupt { path: path.into(), detail };
    if !(m.t >= 0.0 && m.dt > 0.0 && m.t.is_finite() && m.dt.is_finite()) {
        return Err(corrupt(format!("invalid time state t = {}, dt = {}", m.t, m.dt)));
    }
    let surface = match surface {
        Some(s) => {
            if s.descriptor() != m.surface {
                return Err(corrupt("checkpoint surface does not match the given surface".into()));
            }
            s.clone()
        }
        None => m.surface.build()?,
    };
    if m.field.count != surface.node_count() || m.field.dtype != "f64le" {
        return Err(corrupt(format!(
            "field has {} {} values for {} nodes",
            m.field.count,
            m.field.dtype,
            surface.node_count()
        )));
    }
    let payload = path.parent().unwrap_or_else(|| Path::new(".")).join(&m.field.payload);
    let bytes = fs::read(&payload).map_err(|e| IoError::io(&payload, e))?;
    let values = decode_f64le(&bytes, m.field.count, &payload)?;
    let u =
        ScalarField::new(&surface, values).map_err(|e| IoError::Corrupt { path: payload, detail: e.to_string() })?;
    Ok(FlowState {
        t: m.t,
        metric: ConformalMetric::new(u),
        dt: m.dt,
        step_count: m.step_count,
        controller: m.controller,
    })
}
