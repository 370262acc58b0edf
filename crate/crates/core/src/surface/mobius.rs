use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{ConformalMetric, Point, ScalarField};
use crate::error::{GeometryError, Result};

/// Möbius transformation `w = (aζ + b)/(cζ + d)` acting on the unit sphere
/// through stereographic projection from the north pole.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobiusMap {
    pub a: Complex64,
    pub b: Complex64,
    pub c: Complex64,
    pub d: Complex64,
}

/// Homogeneous stereographic coordinates `[z1 : z2]` of a unit vector,
/// picking the chart that stays away from `0/0`.
fn homogeneous(p: &Point) -> (Complex64, Complex64) {
    if p.z <= 0.0 {
        (Complex64::new(p.x, p.y), Complex64::new(1.0 - p.z, 0.0))
    } else {
        (Complex64::new(1.0 + p.z, 0.0), Complex64::new(p.x, -p.y))
    }
}

fn to_sphere(w1: Complex64, w2: Complex64) -> Point {
    let n = w1.norm_sqr() + w2.norm_sqr();
    let c = w1 * w2.conj();
    Point::new(2.0 * c.re / n, 2.0 * c.im / n, (w1.norm_sqr() - w2.norm_sqr()) / n)
}

impl MobiusMap {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        MobiusMap { a: one, b: zero, c: zero, d: one }
    }

    /// `ζ ↦ λζ`, concentrating area at the south pole for `λ > 1`.
    pub fn dilation(lambda: f64) -> Self {
        MobiusMap { a: Complex64::new(lambda, 0.0), ..Self::identity() }
    }

    /// Rotation about the vertical axis by `theta`.
    pub fn rotation_z(theta: f64) -> Self {
        MobiusMap { a: Complex64::from_polar(1.0, theta), ..Self::identity() }
    }

    pub fn determinant(&self) -> Complex64 {
        self.a * self.d - self.b * self.c
    }

    fn validate(&self) -> Result<()> {
        let scale = [self.a, self.b, self.c, self.d].iter().map(|z| z.norm_sqr()).sum::<f64>();
        if !scale.is_finite() || self.determinant().norm() <= 1e-12 * scale {
            return Err(GeometryError::InvalidArgument("degenerate Möbius map (ad - bc ≈ 0)".into()));
        }
        Ok(())
    }

    fn apply_homogeneous(&self, z1: Complex64, z2: Complex64) -> (Complex64, Complex64) {
        (self.a * z1 + self.b * z2, self.c * z1 + self.d * z2)
    }

    /// Image of a point of the unit sphere.
    pub fn apply(&self, p: &Point) -> Point {
        let (z1, z2) = homogeneous(p);
        let (w1, w2) = self.apply_homogeneous(z1, z2);
        to_sphere(w1, w2)
    }

    /// `σ(p)` with `π* g_round = e^{2σ} g_round` at `p`.
    pub fn log_conformal_factor(&self, p: &Point) -> f64 {
        let (z1, z2) = homogeneous(p);
        let (w1, w2) = self.apply_homogeneous(z1, z2);
        self.determinant().norm().ln() + (z1.norm_sqr() + z2.norm_sqr()).ln() - (w1.norm_sqr() + w2.norm_sqr()).ln()
    }
}

/// Pullback `π* g` expressed on the same mesh: the new conformal exponent is
/// `u(π(p)) + σ(p)`, with `u ∘ π` obtained by barycentric interpolation.
pub fn mobius_pullback(metric: &ConformalMetric, map: &MobiusMap) -> Result<ConformalMetric> {
    map.validate()?;
    let surface = metric.surface();
    let mesh = surface.sphere_mesh().ok_or(GeometryError::Unsupported { op: "mobius_pullback", topology: "torus" })?;
    let u = metric.u().values();
    let constant = u.iter().all(|&v| v == u[0]);
    let values = mesh
        .vertices()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let moved = if constant { u[0] } else { mesh.interpolate(u, &map.apply(p), i) };
            moved + map.log_conformal_factor(p)
        })
        .collect();
    Ok(ConformalMetric::new(ScalarField::new(surface, values)?))
}
