//! Geometry of the space of Kähler potentials `φ` with `ω_φ = 1 + Δ₀φ > 0`
//! and `L²` metric `‖ψ‖²_φ = ∫ ψ² ω_φ dg₀`.
//!
//! Potentials are stored as a zero-mean field plus a scalar offset. Adding a
//! constant to a potential does not change the metric, and the constant
//! direction of a geodesic separates exactly: if `φ(t)` joins `φ_a` to
//! `φ_b`, then `φ(t) + ct` joins `φ_a` to `φ_b + c`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::{potential_of, DecayFit, EnergySample};
use crate::error::{GeometryError, IoError, Result};
use crate::flow::{run, FlowConfig};
use crate::io::{encode_f64le, write_field, write_json};
use crate::linalg::solve_tridiagonal;
use crate::surface::{ConformalMetric, ScalarField, SurfaceRef};

/// A Kähler potential: zero-mean part and constant offset.
#[derive(Debug, Clone)]
pub struct Potential {
    phi: ScalarField,
    offset: f64,
}

fn omega_of(surface: &SurfaceRef, phi: &[f64]) -> Vec<f64> {
    surface.laplace0_values(phi).iter().map(|l| 1.0 + l).collect()
}

fn check_positive(omega: &[f64]) -> Result<()> {
    let min = omega.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        Ok(())
    } else {
        Err(GeometryError::InvalidPotential { min })
    }
}

impl Potential {
    /// Splits `φ` into its zero-mean part and mean.
    pub fn new(phi: ScalarField) -> Result<Self> {
        let s = phi.surface().clone();
        let mean = s.background_integral(phi.values()) / s.background_area();
        let zero_mean = phi.map(|v| v - mean);
        check_positive(&omega_of(&s, zero_mean.values()))?;
        Ok(Potential { phi: zero_mean, offset: mean })
    }

    pub fn zero(surface: &SurfaceRef) -> Self {
        Potential { phi: ScalarField::zeros(surface), offset: 0.0 }
    }

    /// Zero-mean potential of `metric` rescaled to the background area.
    pub fn from_metric(metric: &ConformalMetric) -> Result<Self> {
        Potential::new(potential_of(metric)?)
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn surface(&self) -> &SurfaceRef {
        self.phi.surface()
    }

    /// Zero-mean part.
    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `φ` including the offset.
    pub fn values(&self) -> Vec<f64> {
        self.phi.values().iter().map(|v| v + self.offset).collect()
    }

    /// `ω_φ = 1 + Δ₀φ` at every node.
    pub fn omega(&self) -> Vec<f64> {
        omega_of(self.surface(), self.phi.values())
    }

    /// The metric `ω_φ g₀`.
    pub fn metric(&self) -> Result<ConformalMetric> {
        let u: Vec<f64> = self.omega().iter().map(|w| 0.5 * w.ln()).collect();
        Ok(ConformalMetric::new(ScalarField::new(self.surface(), u)?))
    }
}

fn same_surface(a: &SurfaceRef, b: &SurfaceRef) -> Result<()> {
    if std::sync::Arc::ptr_eq(a, b) {
        Ok(())
    } else {
        Err(GeometryError::Contract("fields live on different surfaces".into()))
    }
}

fn weighted_sq(surface: &SurfaceRef, f: &[f64], omega: &[f64]) -> f64 {
    f.iter().zip(omega).zip(surface.weights()).map(|((f, o), w)| f * f * o * w).sum()
}

/// `‖ψ‖²_φ = ∫ ψ² ω_φ dg₀`.
pub fn tangent_norm_sq(phi: &Potential, psi: &ScalarField) -> Result<f64> {
    same_surface(phi.surface(), psi.surface())?;
    Ok(weighted_sq(phi.surface(), psi.values(), &phi.omega()))
}

pub fn tangent_norm(phi: &Potential, psi: &ScalarField) -> Result<f64> {
    tangent_norm_sq(phi, psi).map(f64::sqrt)
}

/// `{f, h}_φ = (f_x h_y - f_y h_x) / ω_φ` on the torus.
pub fn poisson_bracket(phi: &Potential, f: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
    same_surface(phi.surface(), f.surface())?;
    same_surface(phi.surface(), h.surface())?;
    let g =
        phi.surface().torus_grid().ok_or(GeometryError::Unsupported { op: "poisson_bracket", topology: "sphere" })?;
    let (fx, fy) = (g.dx(f.values()), g.dy(f.values()));
    let (hx, hy) = (g.dx(h.values()), g.dy(h.values()));
    let omega = phi.omega();
    let values = (0..fx.len()).map(|i| (fx[i] * hy[i] - fy[i] * hx[i]) / omega[i]).collect();
    ScalarField::new(phi.surface(), values)
}

/// Sectional curvature `-¼ ‖{e₁, e₂}_φ‖²_φ` of the plane spanned by `d1`,
/// `d2`, after orthonormalizing them in the `φ`-norm. Torus only.
pub fn sectional_curvature(phi: &Potential, d1: &ScalarField, d2: &ScalarField) -> Result<f64> {
    if phi.surface().torus_grid().is_none() {
        return Err(GeometryError::Unsupported { op: "sectional_curvature", topology: "sphere" });
    }
    same_surface(phi.surface(), d1.surface())?;
    same_surface(phi.surface(), d2.surface())?;
    let s = phi.surface();
    let omega = phi.omega();
    let ip = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(&omega).zip(s.weights()).map(|(((a, b), o), w)| a * b * o * w).sum()
    };
    let n1 = ip(d1.values(), d1.values()).sqrt();
    let n2 = ip(d2.values(), d2.values()).sqrt();
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(GeometryError::DegeneratePlane);
    }
    let e1: Vec<f64> = d1.values().iter().map(|v| v / n1).collect();
    let c = ip(&e1, d2.values());
    let mut e2: Vec<f64> = d2.values().iter().zip(&e1).map(|(v, e)| v - c * e).collect();
    let m = ip(&e2, &e2).sqrt();
    if m <= 1e-10 * n2 {
        return Err(GeometryError::DegeneratePlane);
    }
    e2.iter_mut().for_each(|v| *v /= m);
    let b = poisson_bracket(phi, &d1.with_values(e1), &d2.with_values(e2))?;
    Ok(-0.25 * weighted_sq(s, b.values(), &omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeodesicOptions {
    pub max_iter: usize,
    /// Weight of the log-barrier `-μ Σ_k ∫ ln ω_k dg₀` on interior nodes.
    pub barrier: f64,
    /// Stop when the predicted decrease `½⟨∇E, p⟩` falls below this.
    pub decrement_tol: f64,
    /// Stop when the accepted energy decrease falls below this fraction of
    /// the energy.
    pub energy_tol: f64,
    /// If set, a solved path whose geodesic residual exceeds this is a failure.
    pub residual_tol: Option<f64>,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        GeodesicOptions { max_iter: 2000, barrier: 1e-10, decrement_tol: 1e-20, energy_tol: 1e-12, residual_tol: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Decrement,
    EnergyStall,
    Trivial,
    NotSolved,
}

/// Discretized path `φ₀, …, φ_N` at `t_k = k/N`.
///
/// `nodes` joins the zero-mean endpoint parts; the offset difference `slope`
/// is added as the ramp `slope · t_k`.
#[derive(Debug, Clone)]
pub struct PotentialPath {
    surface: SurfaceRef,
    nodes: Vec<Vec<f64>>,
    offset_a: f64,
    slope: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Path energy (without barrier) after each accepted iteration.
    pub history: Vec<f64>,
}

/// Discrete path energy `Σ_k (1/Δt) ∫ d_k² ω̄_k dg₀` with `d_k = φ_{k+1} - φ_k`
/// and midpoint weight `ω̄_k = 1 + ½Δ₀(φ_k + φ_{k+1})`, and the cross term
/// `Σ_k ∫ d_k ω̄_k dg₀`.
fn energy_terms(s: &SurfaceRef, nodes: &[Vec<f64>], laps: &[Vec<f64>]) -> (f64, f64) {
    let n = nodes.len() - 1;
    let dt = 1.0 / n as f64;
    let w = s.weights();
    let mut e = 0.0;
    let mut cross = 0.0;
    for k in 0..n {
        for i in 0..w.len() {
            let d = nodes[k + 1][i] - nodes[k][i];
            let ob = 1.0 + 0.5 * (laps[k][i] + laps[k + 1][i]);
            e += d * d * ob * w[i] / dt;
            cross += d * ob * w[i];
        }
    }
    (e, cross)
}

impl PotentialPath {
    /// Path through the given nodes (including both endpoints).
    pub fn from_nodes(surface: &SurfaceRef, nodes: Vec<Vec<f64>>) -> Result<Self> {
        if nodes.len() < 2 || nodes.iter().any(|n| n.len() != surface.node_count()) {
            return Err(GeometryError::InvalidArgument("path needs at least two nodes of matching size".into()));
        }
        for n in &nodes {
            check_positive(&omega_of(surface, n))?;
        }
        Ok(PotentialPath {
            surface: surface.clone(),
            nodes,
            offset_a: 0.0,
            slope: 0.0,
            iterations: 0,
            stop: StopReason::NotSolved,
            history: Vec::new(),
        })
    }

    /// Linear interpolation with `n` segments.
    pub fn linear(a: &Potential, b: &Potential, n: usize) -> Result<Self> {
        same_surface(a.surface(), b.surface())?;
        if n < 1 {
            return Err(GeometryError::InvalidArgument("need at least one segment".into()));
        }
        let (pa, pb) = (a.phi().values(), b.phi().values());
        let nodes = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                pa.iter().zip(pb).map(|(x, y)| x + t * (y - x)).collect()
            })
            .collect();
        let mut p = PotentialPath::from_nodes(a.surface(), nodes)?;
        p.offset_a = a.offset();
        p.slope = b.offset() - a.offset();
        Ok(p)
    }

    pub fn surface(&self) -> &SurfaceRef {
        &self.surface
    }

    /// Number of segments `N`.
    pub fn segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.segments() as f64
    }

    pub fn params(&self) -> Vec<f64> {
        (0..=self.segments()).map(|k| k as f64 * self.dt()).collect()
    }

    /// `φ_k` including offsets.
    pub fn node(&self, k: usize) -> Vec<f64> {
        let c = self.offset_a + self.slope * k as f64 * self.dt();
        self.nodes[k].iter().map(|v| v + c).collect()
    }

    pub fn node_field(&self, k: usize) -> Result<ScalarField> {
        ScalarField::new(&self.surface, self.node(k))
    }

    fn laps(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|n| self.surface.laplace0_values(n)).collect()
    }

    /// Path energy including the constant direction.
    pub fn energy(&self) -> f64 {
        let (e, cross) = energy_terms(&self.surface, &self.nodes, &self.laps());
        let a = self.surface.background_area();
        e + 2.0 * self.slope * cross + self.slope * self.slope * a
    }

    /// Energy of the path with the constant direction removed optimally,
    /// i.e. the squared distance between the underlying metrics.
    pub fn metric_energy(&self) -> f64 {
        let (e, cross) = energy_terms(&self.surface, &self.nodes, &self.laps());
        (e - cross * cross / self.surface.background_area()).max(0.0)
    }

    /// `Σ_k ‖φ_{k+1} - φ_k‖_{ω̄_k}`.
    pub fn length(&self) -> f64 {
        let laps = self.laps();
        let w = self.surface.weights();
        let step = self.slope * self.dt();
        (0..self.segments())
            .map(|k| {
                (0..w.len())
                    .map(|i| {
                        let d = self.nodes[k + 1][i] - self.nodes[k][i] + step;
                        d * d * (1.0 + 0.5 * (laps[k][i] + laps[k + 1][i])) * w[i]
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }

    /// Distance between the endpoint potentials, `√E` for a geodesic.
    pub fn distance(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Distance between the endpoint metrics (constant-blind).
    pub fn metric_distance(&self) -> f64 {
        self.metric_energy().sqrt()
    }

    /// Velocity `φ'` at each node: central differences inside, one-sided at
    /// the ends.
    pub fn velocities(&self) -> Vec<Vec<f64>> {
        let n = self.segments();
        let dt = self.dt();
        (0..=n)
            .map(|k| {
                let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n));
                let h = (hi - lo) as f64 * dt;
                self.nodes[hi].iter().zip(&self.nodes[lo]).map(|(a, b)| (a - b) / h + self.slope).collect()
            })
            .collect()
    }
}

/// `max_k ‖φ'' - ½|∇φ'|²/ω_φ‖_φ` over interior nodes, with second differences.
pub fn geodesic_residual(path: &PotentialPath) -> Result<f64> {
    let n = path.segments();
    if n < 2 {
        return Err(GeometryError::InvalidArgument("need N >= 2 for second differences".into()));
    }
    let s = &path.surface;
    let dt = path.dt();
    let vel = path.velocities();
    let mut worst: f64 = 0.0;
    for k in 1..n {
        let omega = omega_of(s, &path.nodes[k]);
        let grad = s.grad_inner0_values(&vel[k], &vel[k]);
        let r: Vec<f64> = (0..omega.len())
            .map(|i| {
                let acc = (path.nodes[k + 1][i] - 2.0 * path.nodes[k][i] + path.nodes[k - 1][i]) / (dt * dt);
                acc - 0.5 * grad[i] / omega[i]
            })
            .collect();
        worst = worst.max(weighted_sq(s, &r, &omega).sqrt());
    }
    Ok(worst)
}

/// `D_tψ = ∂ψ/∂t - ½ (∇ψ, ∇φ')₀ / ω_φ` at every node of the path.
pub fn covariant_derivative(path: &PotentialPath, psi: &[ScalarField]) -> Result<Vec<ScalarField>> {
    let n = path.segments();
    if psi.len() != n + 1 {
        return Err(GeometryError::InvalidArgument(format!("{} samples for a path with {} nodes", psi.len(), n + 1)));
    }
    for p in psi {
        same_surface(&path.surface, p.surface())?;
    }
    let s = &path.surface;
    let dt = path.dt();
    let vel = path.velocities();
    (0..=n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n));
            let h = (hi - lo) as f64 * dt;
            let omega = omega_of(s, &path.nodes[k]);
            let g = s.grad_inner0_values(psi[k].values(), &vel[k]);
            let values = (0..omega.len())
                .map(|i| (psi[hi].values()[i] - psi[lo].values()[i]) / h - 0.5 * g[i] / omega[i])
                .collect();
            ScalarField::new(s, values)
        })
        .collect()
}

struct Objective<'a> {
    s: &'a SurfaceRef,
    mu: f64,
}

impl Objective<'_> {
    /// Energy plus barrier, or `None` if an interior node loses positivity.
    fn value(&self, nodes: &[Vec<f64>], laps: &[Vec<f64>]) -> Option<f64> {
        let n = nodes.len() - 1;
        let w = self.s.weights();
        let mut barrier = 0.0;
        for lap in &laps[1..n] {
            for (l, wi) in lap.iter().zip(w) {
                let o = 1.0 + l;
                if !(o > 0.0) {
                    return None;
                }
                barrier -= o.ln() * wi;
            }
        }
        Some(energy_terms(self.s, nodes, laps).0 + self.mu * barrier)
    }

    /// Gradient density on interior nodes.
    fn gradient(&self, nodes: &[Vec<f64>], laps: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = nodes.len() - 1;
        let dt = 1.0 / n as f64;
        let m = self.s.node_count();
        let d: Vec<Vec<f64>> = (0..n).map(|k| (0..m).map(|i| nodes[k + 1][i] - nodes[k][i]).collect()).collect();
        let dw: Vec<Vec<f64>> =
            (0..n).map(|k| (0..m).map(|i| d[k][i] * (1.0 + 0.5 * (laps[k][i] + laps[k + 1][i]))).collect()).collect();
        (1..n)
            .map(|k| {
                let sq: Vec<f64> = (0..m).map(|i| d[k - 1][i].powi(2) + d[k][i].powi(2)).collect();
                let lsq = self.s.laplace0_values(&sq);
                let inv: Vec<f64> = laps[k].iter().map(|l| 1.0 / (1.0 + l)).collect();
                let linv = self.s.laplace0_values(&inv);
                (0..m).map(|i| (2.0 * dw[k - 1][i] - 2.0 * dw[k][i] + 0.5 * lsq[i]) / dt - self.mu * linv[i]).collect()
            })
            .collect()
    }
}

/// Minimizes the discrete path energy between `a` and `b` over `n` segments,
/// starting from linear interpolation.
pub fn solve_geodesic(a: &Potential, b: &Potential, n: usize, opts: &GeodesicOptions) -> Result<PotentialPath> {
    if n < 2 {
        return Err(GeometryError::InvalidArgument(format!("need at least 2 segments, got {n}")));
    }
    let mut path = PotentialPath::linear(a, b, n)?;
    let s = path.surface.clone();
    let m = s.node_count();
    let obj = Objective { s: &s, mu: opts.barrier };
    let dt = path.dt();
    let w = s.weights().to_vec();

    let mut laps = path.laps();
    let mut value = obj.value(&path.nodes, &laps).expect("endpoints and their interpolation are positive");
    path.history.push(energy_terms(&s, &path.nodes, &laps).0);
    let mut stop = StopReason::NotSolved;
    let mut last_decrement = f64::INFINITY;
    if path.nodes[0] == path.nodes[n] {
        stop = StopReason::Trivial;
    }
    let tri = n - 1;
    let (sub, diag, sup) = (vec![-2.0 / dt; tri], vec![4.0 / dt; tri], vec![-2.0 / dt; tri]);
    while stop == StopReason::NotSolved && path.iterations < opts.max_iter {
        let grad = obj.gradient(&path.nodes, &laps);
        // time-direction Newton preconditioner, one tridiagonal solve per node
        let mut dir = vec![vec![0.0; m]; tri];
        let mut col = vec![0.0; tri];
        for i in 0..m {
            for k in 0..tri {
                col[k] = grad[k][i];
            }
            solve_tridiagonal(&sub, &diag, &sup, &mut col);
            for k in 0..tri {
                dir[k][i] = col[k];
            }
        }
        let slope: f64 = (0..tri).map(|k| (0..m).map(|i| grad[k][i] * dir[k][i] * w[i]).sum::<f64>()).sum();
        last_decrement = 0.5 * slope;
        if !(slope > 0.0) || last_decrement <= opts.decrement_tol {
            stop = StopReason::Decrement;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<Vec<f64>> = (0..=n)
                .map(|k| {
                    if k == 0 || k == n {
                        path.nodes[k].clone()
                    } else {
                        path.nodes[k].iter().zip(&dir[k - 1]).map(|(x, p)| x - alpha * p).collect()
                    }
                })
                .collect();
            let tlaps: Vec<Vec<f64>> = trial.iter().map(|t| s.laplace0_values(t)).collect();
            if let Some(v) = obj.value(&trial, &tlaps) {
                if v <= value - 1e-4 * alpha * slope {
                    accepted = Some((trial, tlaps, v));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((trial, tlaps, v)) = accepted else {
            return Err(GeometryError::GeodesicFailure {
                reason: format!("line search failed after {} iterations", path.iterations),
                residual: last_decrement,
            });
        };
        let decrease = value - v;
        path.nodes = trial;
        laps = tlaps;
        value = v;
        path.iterations += 1;
        path.history.push(energy_terms(&s, &path.nodes, &laps).0);
        if decrease <= opts.energy_tol * value.abs() {
            stop = StopReason::EnergyStall;
        }
    }
    if stop == StopReason::NotSolved {
        return Err(GeometryError::GeodesicFailure {
            reason: format!("no convergence in {} iterations", opts.max_iter),
            residual: last_decrement,
        });
    }
    path.stop = stop;
    if let Some(tol) = opts.residual_tol {
        let r = geodesic_residual(&path)?;
        if r > tol {
            return Err(GeometryError::GeodesicFailure {
                reason: format!("geodesic residual {r:.3e} above tolerance {tol:.3e}"),
                residual: r,
            });
        }
    }
    Ok(path)
}

/// Distance between two metrics of equal area (constant-blind).
pub fn distance(g1: &ConformalMetric, g2: &ConformalMetric, n: usize, opts: &GeodesicOptions) -> Result<f64> {
    same_surface(g1.surface(), g2.surface())?;
    let (a1, a2) = (g1.area(), g2.area());
    if (a1 - a2).abs() > 1e-6 * a1.max(a2) {
        return Err(GeometryError::InvalidArgument(format!("metrics have different areas {a1} and {a2}")));
    }
    let path = solve_geodesic(&Potential::from_metric(g1)?, &Potential::from_metric(g2)?, n, opts)?;
    Ok(path.metric_distance())
}

/// Length of the flow curve over `[s, t]` and the closed-form bounds from a
/// decay fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub s: f64,
    pub t: f64,
    /// `∫ₛᵗ √Ca dτ` (trapezoid on the samples, linear interpolation at the ends).
    pub length: f64,
    /// `C (e^{-αs} - e^{-αt}) / α`.
    pub literal_bound: Option<f64>,
    /// `2√C (e^{-αs/2} - e^{-αt/2}) / α`, the integral of `√(C e^{-ατ})`.
    pub sqrt_bound: Option<f64>,
}

pub fn flow_curve_tail(samples: &[EnergySample], s: f64, t: f64, fit: Option<&DecayFit>) -> Result<TailReport> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => return Err(GeometryError::InvalidArgument("empty trace".into())),
    };
    if !(s <= t && s >= first && t <= last) {
        return Err(GeometryError::InvalidArgument(format!("window [{s}, {t}] outside trace [{first}, {last}]")));
    }
    let root = |x: &EnergySample| x.calabi.max(0.0).sqrt();
    let mut length = 0.0;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (lo, hi) = (a.t.max(s), b.t.min(t));
        if hi <= lo {
            continue;
        }
        let at = |x: f64| root(a) + (root(b) - root(a)) * (x - a.t) / (b.t - a.t);
        length += 0.5 * (at(lo) + at(hi)) * (hi - lo);
    }
    let literal_bound = fit.map(|f| f.prefactor * ((-f.alpha * s).exp() - (-f.alpha * t).exp()) / f.alpha);
    let sqrt_bound =
        fit.map(|f| 2.0 * f.prefactor.sqrt() * ((-0.5 * f.alpha * s).exp() - (-0.5 * f.alpha * t).exp()) / f.alpha);
    Ok(TailReport { s, t, length, literal_bound, sqrt_bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceDecrease {
    pub t: f64,
    pub initial: f64,
    pub evolved: f64,
    /// `evolved / initial` (1 when both vanish).
    pub ratio: f64,
    pub tolerance: f64,
    pub violated: bool,
}

/// Flows both metrics to `config.t_end` and compares their distances before
/// and after.
pub fn verify_distance_decrease(
    g1: &ConformalMetric,
    g2: &ConformalMetric,
    config: &FlowConfig,
    n: usize,
    opts: &GeodesicOptions,
    tolerance: f64,
) -> Result<DistanceDecrease> {
    let initial = distance(g1, g2, n, opts)?;
    let evolve = |g: &ConformalMetric| -> Result<ConformalMetric> {
        let trace = run(g.clone(), config)?;
        match trace.failure {
            Some(f) => Err(GeometryError::StepFailure(f.message)),
            None => Ok(trace.final_state.metric),
        }
    };
    let (e1, e2) = (evolve(g1)?, evolve(g2)?);
    let evolved = distance(&e1, &e2, n, opts)?;
    let ratio = if initial > 0.0 {
        evolved / initial
    } else if evolved > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(DistanceDecrease {
        t: config.t_end,
        initial,
        evolved,
        ratio,
        tolerance,
        violated: evolved > initial + tolerance,
    })
}

pub const PATH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathIndex {
    pub format_version: u32,
    #[serde(rename = "N")]
    pub segments: usize,
    pub grid: Vec<f64>,
    pub nodes: Vec<String>,
    /// SHA-256 of the little-endian payload of `φ₀` and `φ_N`.
    pub endpoint_hashes: [String; 2],
    pub energy: f64,
    pub distance: f64,
    pub metric_distance: f64,
}

pub fn field_hash(values: &[f64]) -> String {
    hex::encode(Sha256::digest(encode_f64le(values)))
}

/// Writes `node_XXXX.json/.bin` for every node and `index.json` into `dir`.
pub fn export_path(path: &PotentialPath, dir: &Path) -> Result<PathIndex, IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    let n = path.segments();
    let mut names = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let name = format!("node_{k:04}.json");
        write_field(&dir.join(&name), "phi", &path.node_field(k)?)?;
        names.push(name);
    }
    let index = PathIndex {
        format_version: PATH_FORMAT_VERSION,
        segments: n,
        grid: path.params(),
        nodes: names,
        endpoint_hashes: [field_hash(&path.node(0)), field_hash(&path.node(n))],
        energy: path.energy(),
        distance: path.distance(),
        metric_distance: path.metric_distance(),
    };
    write_json(&dir.join("index.json"), &index)?;
    Ok(index)
}
