use thiserror::Error;

use crate::bridge::IterationRecord;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid or time-grid construction rejected its parameters.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    /// A point lies outside the grid box.
    #[error("point {point:?} lies outside the grid bounds")]
    OutOfBounds { point: Vec<f64> },

    /// Two fields that must share a grid (or a component count) do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A field value is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// A matrix field failed the symmetry check.
    #[error("matrix field is not symmetric (max asymmetry {asymmetry:e}, scale {scale:e})")]
    Asymmetric { asymmetry: f64, scale: f64 },

    /// A density is identically zero or has a nonpositive integral.
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// A scalar parameter is out of range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// The computational box is too small for the requested operation.
    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    /// The diffusion tensor is not uniformly elliptic on the sampled nodes.
    #[error("uniform ellipticity violated: min eigenvalue {min_eigenvalue:e} at t = {time}")]
    NotElliptic { min_eigenvalue: f64, time: f64 },

    /// The problem does not fit the solver's restricted setting.
    #[error("unsupported problem: {0}")]
    Unsupported(String),

    /// The fixed-point iteration did not reach tolerance.
    #[error("bridge iteration did not converge in {iterations} iterations (last errors {last:?})")]
    NotConverged {
        iterations: usize,
        last: (f64, f64),
        log: Vec<IterationRecord>,
    },

    /// Explicit time step exceeds the stability limit.
    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    /// Explicit integration produced a significantly negative density.
    #[error("instability: density reached {value:e} at step {step}")]
    Instability { step: usize, value: f64 },

    /// Particles left the padded simulation box.
    #[error("ensemble blow-up: particle {particle} at {position:?} after step {step}")]
    BlowUp {
        particle: usize,
        step: usize,
        position: Vec<f64>,
    },

    #[error("csv: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotConverged { .. }
                | Error::Cfl { .. }
                | Error::Instability { .. }
                | Error::BlowUp { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
