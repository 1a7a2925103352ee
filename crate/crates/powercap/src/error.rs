//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A model or search parameter violates its documented constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A numeric input or intermediate value is NaN/inf where finite values
    /// are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Vector/matrix shapes do not line up.
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    /// A neural output was requested but no network is attached and the
    /// physics-only fallback was not enabled.
    #[error("untrained network: {0} (enable the physics fallback or attach a trained net)")]
    UntrainedNet(&'static str),

    /// Training diverged.
    #[error("training aborted: loss became NaN at epoch {epoch}")]
    NanLoss { epoch: usize },

    /// Training preconditions violated (empty dataset, inconsistent shapes).
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    /// A discharge simulation ran past its time cap without reaching the
    /// cutoff condition.
    #[error("cap exceeded: no cutoff within {cap_s} s at {current_a} A")]
    CapExceeded { cap_s: f64, current_a: f64 },

    /// A required artifact (trained net, fitted parameters) is absent.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    /// Malformed serialized data (net files, parameter files).
    #[error("parse error: {0}")]
    Parse(String),

    /// Net file with an unsupported version byte.
    #[error("unsupported net file version {got} (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
