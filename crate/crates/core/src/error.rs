use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid depth grid: {0}")]
    InvalidGrid(String),

    #[error("invalid profile: {0}")]
    InvalidProfile(String),

    #[error("depth grids do not match")]
    GridMismatch,

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("input contains no records")]
    EmptyInput,

    #[error("{what} is empty")]
    EmptySet { what: &'static str },

    #[error("need at least {needed} training profiles, got {got}")]
    TooFewProfiles { needed: usize, got: usize },

    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("every beam turned before reaching the bottom")]
    AllBeamsTurned,

    #[error("finite-difference step for coefficient {index} kept turning beams")]
    JacobianStep { index: usize },

    #[error("cost is not finite at the starting point")]
    NonFiniteCost,

    #[error("no converged entry in the regularization sweep")]
    NoConvergedEntries,

    #[error("training failed: {0}")]
    Training(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a numerical failure.
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::NonFiniteCost | Error::Training(_) | Error::JacobianStep { .. }
        )
    }
}
