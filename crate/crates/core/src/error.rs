use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the geometric operators and diagnostics.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("operation `{op}` is not supported on the {topology}")]
    Unsupported { op: &'static str, topology: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid potential: 1 + laplacian(phi) has minimum {min:.3e} (must be positive)")]
    InvalidPotential { min: f64 },
    #[error("degenerate plane: tangent vectors are linearly dependent")]
    DegeneratePlane,
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverFailure { iterations: usize, residual: f64 },
    #[error("eigensolver did not converge after {iterations} restarts (worst residual {residual:.3e})")]
    EigenFailure { iterations: usize, residual: f64 },
    #[error("exponential fit failed: {0}")]
    FitFailure(String),
    #[error("step failed: {0}")]
    StepFailure(String),
    #[error("step size underflow at t = {t:.6e} (dt = {dt:.3e}): problem too stiff for the controller")]
    StiffnessFailure { t: f64, dt: f64 },
    #[error("geodesic solver failed: {reason} (best residual {residual:.3e})")]
    GeodesicFailure { reason: String, residual: f64 },
}

/// Errors from reading or writing field, checkpoint and path files.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("format version mismatch in {path}: found {found}, expected {expected}")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("corrupt payload {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl IoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io { path: path.into(), source }
    }
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;
