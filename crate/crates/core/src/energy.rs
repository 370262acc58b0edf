//! Energy functionals along the flow and their bookkeeping.
//!
//! * area `A = ∫ dg`
//! * Calabi energy `Ca = ∫ (K - K̄)² dg`
//! * Mabuchi energy, in closed form from the potential `φ` with
//!   `e^{2u} = 1 + Δ₀φ`, and as the running integral `Ma(0) - ∫ Ca dt`
//! * Liouville energy `F = ∫ (|∇u|²₀ + 2K₀u) dg₀`
//! * `∫ |∇K|²_g dg`, the integrand of the Liouville dissipation

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::surface::{gauss_curvature, ConformalMetric, ScalarField};

/// `Ca(g) = ∫ (K - K̄)² dg` with `K̄ = 2πχ/A`.
pub fn calabi_energy(metric: &ConformalMetric) -> f64 {
    let k = gauss_curvature(metric);
    let kbar = metric.mean_curvature_target();
    k.values().iter().zip(metric.weights()).map(|(k, w)| (k - kbar).powi(2) * w).sum()
}

/// Zero-mean potential `φ` with `1 + Δ₀φ = e^{2u} A₀/A(g)`.
///
/// The factor `A₀/A(g)` rescales the metric to the background area, the only
/// case where a potential exists; it is 1 for area-normalized metrics.
pub fn potential_of(metric: &ConformalMetric) -> Result<ScalarField> {
    let s = metric.surface();
    let scale = s.background_area() / metric.area();
    let rhs: Vec<f64> = metric.density().iter().map(|d| d * scale - 1.0).collect();
    let phi = s.solve_poisson_values(&rhs)?;
    ScalarField::new(s, phi)
}

/// Closed-form Mabuchi energy of the potential `φ`:
/// `∫ ω ln ω + ½K̄ ∫ φ Δ₀φ - (K₀ - K̄) ∫ φ` over `dg₀`, with `ω = 1 + Δ₀φ`.
///
/// The gradient term `-½K̄|∇φ|²` is written as `½K̄ φΔ₀φ` (integration by
/// parts) with the coefficient that makes `d/dt Ma = -∫(K - K̄) φ_t dg` under
/// the half-Laplacian convention.
pub fn mabuchi_energy_closed(phi: &ScalarField) -> Result<f64> {
    let s = phi.surface();
    let lphi = s.laplace0_values(phi.values());
    let min = lphi.iter().fold(f64::INFINITY, |m, l| m.min(1.0 + l));
    if !(min > 0.0) {
        return Err(GeometryError::InvalidPotential { min });
    }
    let area: f64 = s.background_area();
    let kbar = 2.0 * std::f64::consts::PI * s.euler_characteristic() as f64 / area;
    let k0 = s.background_curvature();
    let w = s.weights();
    let mut entropy = 0.0;
    let mut dirichlet = 0.0;
    let mut linear = 0.0;
    for i in 0..lphi.len() {
        let omega = 1.0 + lphi[i];
        entropy += omega * omega.ln() * w[i];
        dirichlet += phi.values()[i] * lphi[i] * w[i];
        linear += phi.values()[i] * w[i];
    }
    Ok(entropy + 0.5 * kbar * dirichlet - (k0 - kbar) * linear)
}

/// Closed-form Mabuchi energy of a metric through its zero-mean potential.
pub fn mabuchi_of_metric(metric: &ConformalMetric) -> Result<f64> {
    mabuchi_energy_closed(&potential_of(metric)?)
}

/// `Ma(t_k) = Ma(t_0) - ∫_{t_0}^{t_k} Ca dt` by the trapezoid rule.
pub fn mabuchi_energy_integrated(times: &[f64], calabi: &[f64], initial: f64) -> Result<Vec<f64>> {
    if times.len() != calabi.len() {
        return Err(GeometryError::Contract("time and energy series differ in length".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(GeometryError::Contract("time stamps must be strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(times.len());
    let mut acc = initial;
    for k in 0..times.len() {
        if k > 0 {
            acc -= 0.5 * (calabi[k] + calabi[k - 1]) * (times[k] - times[k - 1]);
        }
        out.push(acc);
    }
    Ok(out)
}

/// `F = ∫ (|∇u|²₀ + 2K₀u) dg₀`.
pub fn liouville_energy(metric: &ConformalMetric) -> f64 {
    let s = metric.surface();
    let u = metric.u().values();
    let grad = s.grad_inner0_values(u, u);
    let k0 = s.background_curvature();
    grad.iter().zip(u).zip(s.weights()).map(|((g, u), w)| (g + 2.0 * k0 * u) * w).sum()
}

/// `∫ |∇K|²_g dg`, which equals the background version by conformal
/// invariance.
pub fn gradk_energy(metric: &ConformalMetric) -> f64 {
    let s = metric.surface();
    let k = gauss_curvature(metric);
    let grad = s.grad_inner0_values(k.values(), k.values());
    s.background_integral(&grad)
}

/// Least-squares fit `Ca(t) ≈ C e^{-αt}` on a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub alpha: f64,
    pub prefactor: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// RMS deviation of `ln Ca` from the fitted line.
    pub residual: f64,
    pub samples: usize,
}

/// Fits `ln Ca = ln C - αt` over samples with `t` in `window` (default: the
/// last half of the time range).
pub fn fit_exponential_decay(times: &[f64], calabi: &[f64], window: Option<(f64, f64)>) -> Result<DecayFit> {
    if times.len() != calabi.len() || times.is_empty() {
        return Err(GeometryError::FitFailure("empty or mismatched series".into()));
    }
    let (ta, tb) = window.unwrap_or_else(|| {
        let (first, last) = (times[0], times[times.len() - 1]);
        (first + 0.5 * (last - first), last)
    });
    let pts: Vec<(f64, f64)> =
        times.iter().zip(calabi).filter(|(t, _)| **t >= ta && **t <= tb).map(|(&t, &c)| (t, c)).collect();
    if pts.len() < 4 {
        return Err(GeometryError::FitFailure(format!(
            "{} samples in window [{ta}, {tb}], need at least 4",
            pts.len()
        )));
    }
    if let Some((t, c)) = pts.iter().find(|(_, c)| !(*c > 0.0)) {
        return Err(GeometryError::FitFailure(format!("non-positive Calabi energy {c} at t = {t}")));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1.ln() - my)).sum();
    if sxx == 0.0 {
        return Err(GeometryError::FitFailure("degenerate time window".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = (pts.iter().map(|p| (p.1.ln() - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DecayFit {
        alpha: -slope,
        prefactor: intercept.exp(),
        t_start: pts[0].0,
        t_end: pts[pts.len() - 1].0,
        residual,
        samples: pts.len(),
    })
}

/// One row of the energy ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    pub area: f64,
    pub calabi: f64,
    pub mabuchi_closed: f64,
    pub mabuchi_integrated: f64,
    pub liouville: f64,
    pub gradk: f64,
    pub lambda1: Option<f64>,
    pub kw_residual: Option<f64>,
    pub dt: f64,
    /// `∫ √Ca dt` since the previous sample (trapezoid), the length of the
    /// flow curve in the space of potentials over that interval.
    pub tail_increment: f64,
}

/// Optional spectral columns of a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SpectralColumns {
    pub lambda1: Option<f64>,
    pub kw_residual: Option<f64>,
}

/// Single-writer accumulator of energy samples along one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    samples: Vec<EnergySample>,
}

pub const TRACE_CSV_HEADER: &str =
    "t,area,calabi,mabuchi_closed,mabuchi_integrated,liouville,gradk,lambda1,kw_residual,dt";

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_samples(samples: Vec<EnergySample>) -> Self {
        EnergyLedger { samples }
    }

    pub fn samples(&self) -> &[EnergySample] {
        &self.samples
    }

    pub fn last(&self) -> Option<&EnergySample> {
        self.samples.last()
    }

    /// Measures every functional of `metric` at time `t` and appends the row.
    pub fn record(
        &mut self,
        t: f64,
        metric: &ConformalMetric,
        dt: f64,
        spectral: SpectralColumns,
    ) -> Result<&EnergySample> {
        if let Some(prev) = self.samples.last() {
            if !(t > prev.t) {
                return Err(GeometryError::Contract(format!("sample time {t} does not advance past {}", prev.t)));
            }
        }
        let calabi = calabi_energy(metric);
        let mabuchi_closed = mabuchi_of_metric(metric)?;
        let (mabuchi_integrated, tail_increment) = match self.samples.last() {
            None => (mabuchi_closed, 0.0),
            Some(p) => (
                p.mabuchi_integrated - 0.5 * (p.calabi + calabi) * (t - p.t),
                0.5 * (p.calabi.sqrt() + calabi.sqrt()) * (t - p.t),
            ),
        };
        self.samples.push(EnergySample {
            t,
            area: metric.area(),
            calabi,
            mabuchi_closed,
            mabuchi_integrated,
            liouville: liouville_energy(metric),
            gradk: gradk_energy(metric),
            lambda1: spectral.lambda1,
            kw_residual: spectral.kw_residual,
            dt,
            tail_increment,
        });
        Ok(self.samples.last().expect("just pushed"))
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn calabi(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.calabi).collect()
    }

    pub fn fit_decay(&self, window: Option<(f64, f64)>) -> Result<DecayFit> {
        fit_exponential_decay(&self.times(), &self.calabi(), window)
    }

    /// CSV with [`TRACE_CSV_HEADER`]; empty cells for absent spectral columns.
    pub fn to_csv(&self, preamble: &[String]) -> String {
        let mut out = String::new();
        for line in preamble {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "{TRACE_CSV_HEADER}");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for s in &self.samples {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.t,
                s.area,
                s.calabi,
                s.mabuchi_closed,
                s.mabuchi_integrated,
                s.liouville,
                s.gradk,
                opt(s.lambda1),
                opt(s.kw_residual),
                s.dt
            );
        }
        out
    }
}

/// Sample-to-sample monotonicity of one ledger column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub series: String,
    pub max_increase: f64,
    /// Time of the first sample that rose by more than the tolerance.
    pub first_violation: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks that Ca, both Mabuchi variants and F never rise by more than `tol`.
pub fn check_monotone(samples: &[EnergySample], tol: f64) -> Vec<MonotonicityCheck> {
    let columns: [(&str, fn(&EnergySample) -> f64); 4] = [
        ("calabi", |s| s.calabi),
        ("mabuchi_closed", |s| s.mabuchi_closed),
        ("mabuchi_integrated", |s| s.mabuchi_integrated),
        ("liouville", |s| s.liouville),
    ];
    columns
        .iter()
        .map(|(name, get)| {
            let values: Vec<f64> = samples.iter().map(get).collect();
            let first_violation = values.windows(2).position(|w| w[1] - w[0] > tol).map(|i| samples[i + 1].t);
            MonotonicityCheck {
                series: name.to_string(),
                max_increase: max_increase(&values),
                first_violation,
                tolerance: tol,
                passed: first_violation.is_none() && values.iter().all(|v| v.is_finite()),
            }
        })
        .collect()
}

/// Largest increase between consecutive entries (0 for a non-increasing
/// series).
pub fn max_increase(series: &[f64]) -> f64 {
    series.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}
