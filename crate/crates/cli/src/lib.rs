//! Experiment runner for the Calabi flow laboratory: configuration files,
//! reproducible run directories, reports and plots.
//!
//! Every command returns an [`ExitStatus`]; errors that stop a command early
//! are [`RunError`]s and map onto the same exit codes.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

use thiserror::Error;

/// Version stamped into every trace, summary and plot.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitStatus {
    Pass,
    Violation,
    ConfigError,
    NumericalFailure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Pass => 0,
            ExitStatus::Violation => 1,
            ExitStatus::ConfigError => 2,
            ExitStatus::NumericalFailure => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExitStatus::Pass => "pass",
            ExitStatus::Violation => "violation",
            ExitStatus::ConfigError => "config_error",
            ExitStatus::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn status(&self) -> ExitStatus {
        match self {
            RunError::Config(_) => ExitStatus::ConfigError,
            RunError::Numerical(_) | RunError::Io(_) => ExitStatus::NumericalFailure,
        }
    }
}

impl From<calabi_core::IoError> for RunError {
    fn from(e: calabi_core::IoError) -> Self {
        RunError::Io(e.to_string())
    }
}

impl From<calabi_core::GeometryError> for RunError {
    fn from(e: calabi_core::GeometryError) -> Self {
        RunError::Numerical(e.to_string())
    }
}
