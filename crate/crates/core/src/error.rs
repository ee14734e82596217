use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("stencil underflow: {needed} points needed, grid has {available}")]
    StencilUnderflow { needed: usize, available: usize },

    #[error("nonpositive metric coefficient {field} = {value:e} at x = {x:e}")]
    NonpositiveMetric {
        field: &'static str,
        x: f64,
        value: f64,
    },

    #[error("cross-section chart degenerate: {0}")]
    ChartDegenerate(String),

    #[error("radius {x:e} outside grid hull [{lo:e}, {hi:e}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },

    #[error("geodesic gauge failure: {0}")]
    GaugeFailure(String),

    #[error("dimension n = {0} unsupported (the second coefficient has a pole at n = 3)")]
    DimensionUnsupported(usize),

    #[error("cutoff overlap: nu2 = {nu2:e} exceeds the admissible hull {limit:e}")]
    CutoffOverlap { nu2: f64, limit: f64 },

    #[error("mollifier quadrature under-resolved: spacing {spacing:e} > x_n / 4 = {limit:e}")]
    QuadratureUnderresolved { spacing: f64, limit: f64 },

    #[error("step rejected at t = {t:e}: {reason}")]
    StepRejected { t: f64, reason: String },

    #[error("non-finite value detected at t = {t:e}")]
    NanDetected { t: f64 },

    #[error("insufficient snapshots: {0}")]
    InsufficientSnapshots(String),

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("iteration stalled after {iterations} iterations (last change {last_change:e})")]
    IterationStall { iterations: usize, last_change: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Parse { .. }
            | Error::Validation(_)
            | Error::DimensionUnsupported(_)
            | Error::CutoffOverlap { .. }
            | Error::OutOfRange { .. }
            | Error::ModeMismatch(_) => 2,
            Error::Io { .. } => 4,
            _ => 3,
        }
    }
}
