//! Numerical laboratory for the Calabi flow of conformal metrics on the flat
//! torus and the round sphere.
//!
//! * [`surface`]: discretized surfaces, conformal metrics, curvature and the
//!   other differential operators.
//! * [`flow`]: implicit-explicit time stepping of `∂u/∂t = ½ Δ_g K` with
//!   step-doubling error control and checkpoints.
//! * [`energy`]: area, Calabi, Mabuchi and Liouville functionals, traces and
//!   exponential-decay fits.
//! * [`potential`]: geometry of the space of Kähler potentials (tangent norm,
//!   Poisson bracket, curvature, geodesics and distance).
//! * [`spectral`]: low spectrum of `Δ_g`, the first eigenvalue band, the
//!   Kazdan–Warner residual and concentration monitors.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod energy;
pub mod error;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod potential;
pub mod spectral;
pub mod surface;

pub use error::{GeometryError, IoError};
pub use surface::{ConformalMetric, ScalarField, Surface, SurfaceDescriptor, SurfaceRef, Topology};
