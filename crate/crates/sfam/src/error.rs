//! Error types shared across the crate.

use thiserror::Error;

use crate::articulated_solver::Diagnostics;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Non-finite or otherwise unusable numeric input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix dimensions do not satisfy an operation's contract.
    #[error("shape error: {0}")]
    Shape(String),

    /// Skeleton indices do not match the structure they are applied to.
    #[error("skeleton mismatch: {0}")]
    SkeletonMismatch(String),

    /// Skeleton violates its own invariants (bad bones, lengths, duplicates).
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    /// Solver or pipeline configuration out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input carries no exploitable signal (e.g. all-zero measurements).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A matrix exceeds the rank bound required by the operation.
    #[error("rank violation: {0}")]
    RankViolation(String),

    /// Recovered structure collapsed (zero scale, coincident joints).
    #[error("degenerate structure: {0}")]
    DegenerateStructure(String),

    /// Non-finite values appeared during optimization.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The outer optimization diverged; diagnostics up to the abort attached.
    #[error("solver abort: {message}")]
    SolverAbort {
        message: String,
        diagnostics: Box<Diagnostics>,
    },

    /// Rigid alignment is undefined (all points coincident).
    #[error("alignment undefined: {0}")]
    AlignmentUndefined(String),

    /// The normalization denominator of the normalized 3D error vanished.
    #[error("degenerate normalization: {0}")]
    DegenerateNormalization(String),

    /// Motion spec not supported by the generator (e.g. non-tree skeleton).
    #[error("unsupported spec: {0}")]
    UnsupportedSpec(String),

    /// A text file failed to parse; carries the 1-based line number.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// File contents are well-formed but violate the format's schema.
    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the underlying error with context.
    #[error("window {window}, stage {stage}: {source}")]
    Pipeline {
        window: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// CLI exit code: 2 for solver aborts, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SolverAbort { .. } => 2,
            Error::Pipeline { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
