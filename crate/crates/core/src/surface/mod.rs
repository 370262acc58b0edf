//! Discretized surfaces, conformal metrics and the differential operators on
//! them.
//!
//! All Laplacians use the half convention `Δ := ½ Δ_LB` (real
//! Laplace–Beltrami). With it the Gauss curvature of `g = e^{2u} g₀` reads
//! `K = (K₀ - 2Δ₀u) e^{-2u}`, the round unit sphere has first eigenvalues
//! `1, 3, 6, …`, and Green's identity is `∫ f Δh = -½ ∫ (∇f, ∇h)`. Gradients
//! and their norms are the ordinary real ones.

mod mobius;
mod sphere;
mod torus;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};

pub use mobius::{mobius_pullback, MobiusMap};
pub use sphere::{Point, SphereMesh};
pub use torus::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Torus,
    Sphere,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Torus => "torus",
            Topology::Sphere => "sphere",
        }
    }
}

/// Everything needed to rebuild a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "lowercase", deny_unknown_fields)]
pub enum SurfaceDescriptor {
    Torus { nx: usize, ny: usize, lx: f64, ly: f64 },
    Sphere { level: usize },
}

impl SurfaceDescriptor {
    pub fn build(&self) -> Result<SurfaceRef> {
        match *self {
            SurfaceDescriptor::Torus { nx, ny, lx, ly } => Surface::torus(nx, ny, lx, ly),
            SurfaceDescriptor::Sphere { level } => Surface::sphere(level),
        }
    }
}

#[derive(Debug, Clone)]
enum Discretization {
    Torus(TorusGrid),
    Sphere(SphereMesh),
}

/// A compact surface with its background metric `g₀` and discretization.
#[derive(Debug, Clone)]
pub struct Surface {
    disc: Discretization,
    weights: Vec<f64>,
}

/// Shared, immutable surface handle.
pub type SurfaceRef = Arc<Surface>;

impl Surface {
    /// Flat torus `[0,lx) × [0,ly)` on an `nx × ny` grid (both even, ≥ 16).
    pub fn torus(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<SurfaceRef> {
        if nx < 16 || ny < 16 || !nx.is_multiple_of(2) || !ny.is_multiple_of(2) {
            return Err(GeometryError::InvalidArgument(format!(
                "torus grid must be even and at least 16 in each direction, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(GeometryError::InvalidArgument(format!("torus side lengths must be positive, got {lx}x{ly}")));
        }
        let grid = TorusGrid::new(nx, ny, lx, ly);
        let weights = vec![grid.cell_area(); grid.len()];
        Ok(Arc::new(Surface { disc: Discretization::Torus(grid), weights }))
    }

    /// Unit round sphere as an icosphere of the given subdivision level.
    pub fn sphere(level: usize) -> Result<SurfaceRef> {
        let mesh = SphereMesh::icosphere(level)?;
        let weights = mesh.mass().to_vec();
        Ok(Arc::new(Surface { disc: Discretization::Sphere(mesh), weights }))
    }

    pub fn topology(&self) -> Topology {
        match self.disc {
            Discretization::Torus(_) => Topology::Torus,
            Discretization::Sphere(_) => Topology::Sphere,
        }
    }

    pub fn descriptor(&self) -> SurfaceDescriptor {
        match &self.disc {
            Discretization::Torus(g) => SurfaceDescriptor::Torus { nx: g.nx(), ny: g.ny(), lx: g.lx(), ly: g.ly() },
            Discretization::Sphere(m) => SurfaceDescriptor::Sphere { level: m.level() },
        }
    }

    pub fn torus_grid(&self) -> Option<&TorusGrid> {
        match &self.disc {
            Discretization::Torus(g) => Some(g),
            Discretization::Sphere(_) => None,
        }
    }

    pub fn sphere_mesh(&self) -> Option<&SphereMesh> {
        match &self.disc {
            Discretization::Sphere(m) => Some(m),
            Discretization::Torus(_) => None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.weights.len()
    }

    /// Quadrature weights of `dg₀` at the nodes.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn euler_characteristic(&self) -> i32 {
        match self.topology() {
            Topology::Torus => 0,
            Topology::Sphere => 2,
        }
    }

    /// Background curvature `K₀`.
    pub fn background_curvature(&self) -> f64 {
        match self.topology() {
            Topology::Torus => 0.0,
            Topology::Sphere => 1.0,
        }
    }

    /// Background area `A₀`.
    pub fn background_area(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Background geodesic distance between two nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> f64 {
        match &self.disc {
            Discretization::Torus(g) => g.node_distance(a, b),
            Discretization::Sphere(m) => m.node_distance(a, b),
        }
    }

    pub(crate) fn laplace0_values(&self, f: &[f64]) -> Vec<f64> {
        match &self.disc {
            Discretization::Torus(g) => g.laplace0(f),
            Discretization::Sphere(m) => m.laplace0(f),
        }
    }

    pub(crate) fn grad_inner0_values(&self, f: &[f64], h: &[f64]) -> Vec<f64> {
        match &self.disc {
            Discretization::Torus(g) => {
                let (fx, fy) = (g.dx(f), g.dy(f));
                if std::ptr::eq(f, h) {
                    fx.iter().zip(&fy).map(|(a, b)| a * a + b * b).collect()
                } else {
                    let (hx, hy) = (g.dx(h), g.dy(h));
                    (0..f.len()).map(|i| fx[i] * hx[i] + fy[i] * hy[i]).collect()
                }
            }
            Discretization::Sphere(m) => m.grad_inner(f, h),
        }
    }

    /// Zero `g₀`-mean solution of `Δ₀ φ = rhs` (the mean of `rhs` is dropped).
    pub(crate) fn solve_poisson_values(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match &self.disc {
            Discretization::Torus(g) => Ok(g.solve_poisson(rhs)),
            Discretization::Sphere(m) => m.solve_poisson(rhs),
        }
    }

    /// Solves `(I + coeff Δ₀²) x = rhs`.
    pub(crate) fn solve_biharmonic_shifted(&self, rhs: &[f64], coeff: f64, guess: Option<&[f64]>) -> Result<Vec<f64>> {
        match &self.disc {
            Discretization::Torus(g) => Ok(g.solve_biharmonic_shifted(rhs, coeff)),
            Discretization::Sphere(m) => m.solve_biharmonic_shifted(rhs, coeff, guess),
        }
    }

    pub(crate) fn background_integral(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Samples a function of the torus coordinates `(x, y)`.
    pub fn sample_torus(self: &Arc<Self>, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        let g = self.torus_grid().ok_or(GeometryError::Unsupported { op: "sample_torus", topology: "sphere" })?;
        let values = (0..g.len()).map(|i| {
            let (x, y) = g.node_xy(i);
            f(x, y)
        });
        ScalarField::new(self, values.collect())
    }

    /// Samples a function of the embedding coordinates of the unit sphere.
    pub fn sample_sphere(self: &Arc<Self>, f: impl Fn(&Point) -> f64) -> Result<ScalarField> {
        let m = self.sphere_mesh().ok_or(GeometryError::Unsupported { op: "sample_sphere", topology: "torus" })?;
        ScalarField::new(self, m.vertices().iter().map(f).collect())
    }
}

fn same_surface(a: &SurfaceRef, b: &SurfaceRef) -> Result<()> {
    if Arc::ptr_eq(a, b) {
        Ok(())
    } else {
        Err(GeometryError::Contract("fields live on different surfaces".into()))
    }
}

/// Real function sampled at the nodes of a surface.
#[derive(Debug, Clone)]
pub struct ScalarField {
    surface: SurfaceRef,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(surface: &SurfaceRef, values: Vec<f64>) -> Result<Self> {
        if values.len() != surface.node_count() {
            return Err(GeometryError::Contract(format!(
                "field has {} values but the surface has {} nodes",
                values.len(),
                surface.node_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::Contract(format!("non-finite field value at node {i}")));
        }
        Ok(ScalarField { surface: surface.clone(), values })
    }

    pub fn constant(surface: &SurfaceRef, c: f64) -> Self {
        ScalarField { surface: surface.clone(), values: vec![c; surface.node_count()] }
    }

    pub fn zeros(surface: &SurfaceRef) -> Self {
        Self::constant(surface, 0.0)
    }

    pub fn surface(&self) -> &SurfaceRef {
        &self.surface
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        ScalarField { surface: self.surface.clone(), values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_surface(&self.surface, &other.surface)?;
        Ok(self.with_values(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect()))
    }
}

/// Seeded smooth random field with max norm `amplitude` and zero background
/// mean: Fourier modes with `|p|, |q| ≤ 2` on the torus, polynomials of
/// degree ≤ 3 in `(x, y, z)` on the sphere.
pub fn random_smooth(surface: &SurfaceRef, amplitude: f64, seed: u64) -> Result<ScalarField> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let raw = match surface.topology() {
        Topology::Torus => {
            let mut terms = Vec::new();
            for p in -2i32..=2 {
                for q in 0i32..=2 {
                    if (q == 0 && p <= 0) || p.abs().max(q) == 0 {
                        continue;
                    }
                    terms.push((p as f64, q as f64, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
                }
            }
            let g = surface.torus_grid().expect("torus");
            let (lx, ly) = (g.lx(), g.ly());
            surface.sample_torus(|x, y| {
                terms
                    .iter()
                    .map(|(p, q, a, b)| {
                        let arg = 2.0 * PI * (p * x / lx + q * y / ly);
                        a * arg.cos() + b * arg.sin()
                    })
                    .sum()
            })?
        }
        Topology::Sphere => {
            let mut terms = Vec::new();
            for i in 0..=3u32 {
                for j in 0..=(3 - i) {
                    for k in 0..=(3 - i - j) {
                        if i + j + k > 0 {
                            terms.push((i as i32, j as i32, k as i32, rng.gen_range(-1.0..1.0)));
                        }
                    }
                }
            }
            surface.sample_sphere(|p| {
                terms.iter().map(|(i, j, k, c)| c * p.x.powi(*i) * p.y.powi(*j) * p.z.powi(*k)).sum()
            })?
        }
    };
    let mean = surface.background_integral(raw.values()) / surface.background_area();
    let centred = raw.map(|v| v - mean);
    let scale = amplitude / centred.max_abs().max(f64::MIN_POSITIVE);
    Ok(centred.map(|v| v * scale))
}

/// Conformal metric `g = e^{2u} g₀`.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    u: ScalarField,
}

impl ConformalMetric {
    pub fn new(u: ScalarField) -> Self {
        ConformalMetric { u }
    }

    /// The background metric itself (`u ≡ 0`).
    pub fn background(surface: &SurfaceRef) -> Self {
        ConformalMetric { u: ScalarField::zeros(surface) }
    }

    pub fn surface(&self) -> &SurfaceRef {
        self.u.surface()
    }

    pub fn u(&self) -> &ScalarField {
        &self.u
    }

    /// Pointwise density `e^{2u}` of `dg` w.r.t. `dg₀`.
    pub fn density(&self) -> Vec<f64> {
        self.u.values().iter().map(|u| (2.0 * u).exp()).collect()
    }

    /// Quadrature weights of `dg`.
    pub fn weights(&self) -> Vec<f64> {
        self.u.values().iter().zip(self.surface().weights()).map(|(u, w)| (2.0 * u).exp() * w).collect()
    }

    pub fn area(&self) -> f64 {
        self.weights().iter().sum()
    }

    /// `K̄ = 2πχ / A`, from topology and area.
    pub fn mean_curvature_target(&self) -> f64 {
        2.0 * PI * self.surface().euler_characteristic() as f64 / self.area()
    }

    /// Shifts `u` by a constant so that the area equals the background area.
    pub fn normalized(&self) -> Self {
        let c = 0.5 * (self.surface().background_area() / self.area()).ln();
        ConformalMetric { u: self.u.map(|u| u + c) }
    }

    fn check(&self, f: &ScalarField) -> Result<()> {
        same_surface(self.surface(), f.surface())
    }
}

/// `Δ₀ f` on the background metric.
pub fn laplace0(surface: &SurfaceRef, f: &ScalarField) -> Result<ScalarField> {
    same_surface(surface, f.surface())?;
    Ok(f.with_values(surface.laplace0_values(f.values())))
}

/// `Δ_g f = e^{-2u} Δ₀ f`.
pub fn laplace_g(metric: &ConformalMetric, f: &ScalarField) -> Result<ScalarField> {
    metric.check(f)?;
    let l = metric.surface().laplace0_values(f.values());
    let u = metric.u().values();
    Ok(f.with_values(l.iter().zip(u).map(|(l, u)| l * (-2.0 * u).exp()).collect()))
}

/// `K = (K₀ - 2Δ₀u) e^{-2u}`.
pub fn gauss_curvature(metric: &ConformalMetric) -> ScalarField {
    let s = metric.surface();
    let k0 = s.background_curvature();
    let u = metric.u().values();
    let lu = s.laplace0_values(u);
    metric.u().with_values(lu.iter().zip(u).map(|(l, u)| (k0 - 2.0 * l) * (-2.0 * u).exp()).collect())
}

/// Pointwise `(∇f, ∇h)_g`.
pub fn grad_inner(metric: &ConformalMetric, f: &ScalarField, h: &ScalarField) -> Result<ScalarField> {
    metric.check(f)?;
    metric.check(h)?;
    let g0 = metric.surface().grad_inner0_values(f.values(), h.values());
    let u = metric.u().values();
    Ok(f.with_values(g0.iter().zip(u).map(|(g, u)| g * (-2.0 * u).exp()).collect()))
}

/// Pointwise `|∇f|²_g`.
pub fn grad_norm_sq(metric: &ConformalMetric, f: &ScalarField) -> Result<ScalarField> {
    metric.check(f)?;
    let g0 = metric.surface().grad_inner0_values(f.values(), f.values());
    let u = metric.u().values();
    Ok(f.with_values(g0.iter().zip(u).map(|(g, u)| g * (-2.0 * u).exp()).collect()))
}

/// `∫ f dg`.
pub fn integrate(metric: &ConformalMetric, f: &ScalarField) -> Result<f64> {
    metric.check(f)?;
    Ok(f.values().iter().zip(metric.weights()).map(|(a, w)| a * w).sum())
}

/// Pure-type second covariant derivative `f_{,zz}` in the global coordinate
/// frame `z = x + iy` of the torus.
#[derive(Debug, Clone)]
pub struct TensorField2 {
    surface: SurfaceRef,
    components: Vec<Complex64>,
}

impl TensorField2 {
    pub fn components(&self) -> &[Complex64] {
        &self.components
    }

    pub fn surface(&self) -> &SurfaceRef {
        &self.surface
    }

    /// Pointwise `|L(f)|²_g = 4 |f_{,zz}|² e^{-4u}`.
    pub fn norm_sq(&self, metric: &ConformalMetric) -> Result<ScalarField> {
        same_surface(&self.surface, metric.surface())?;
        let u = metric.u().values();
        Ok(metric
            .u()
            .with_values(self.components.iter().zip(u).map(|(c, u)| 4.0 * c.norm_sqr() * (-4.0 * u).exp()).collect()))
    }
}

/// Lichnerowicz operator `L(f) = f_{,zz} dz ⊗ dz` with
/// `f_{,zz} = ∂²f/∂z² - (∂f/∂z)(∂ log F/∂z)`, `F = e^{2u}`. Torus only.
pub fn lichnerowicz(metric: &ConformalMetric, f: &ScalarField) -> Result<TensorField2> {
    metric.check(f)?;
    let g =
        metric.surface().torus_grid().ok_or(GeometryError::Unsupported { op: "lichnerowicz", topology: "sphere" })?;
    let fv = f.values();
    let u = metric.u().values();
    let (fx, fy) = (g.dx(fv), g.dy(fv));
    let (fxx, fyy, fxy) = (g.dxx(fv), g.dyy(fv), g.dxy(fv));
    let (ux, uy) = (g.dx(u), g.dy(u));
    let components = (0..fv.len())
        .map(|i| {
            let f_zz = Complex64::new(0.25 * (fxx[i] - fyy[i]), -0.5 * fxy[i]);
            let f_z = Complex64::new(0.5 * fx[i], -0.5 * fy[i]);
            // ∂ log F / ∂z = 2 ∂u/∂z
            let logf_z = Complex64::new(ux[i], -uy[i]);
            f_zz - f_z * logf_z
        })
        .collect();
    Ok(TensorField2 { surface: metric.surface().clone(), components })
}

#[cfg(test)]
mod tests;
