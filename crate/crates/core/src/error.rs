use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the SCMA detection library and simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("codebook parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid mapping column {column}: {ones} nonzero entries (expected exactly 1)")]
    InvalidMappingColumn { column: usize, ones: usize },

    #[error(
        "no set of {needed} mutually orthogonal users exists; layer-level relabeling is not supported"
    )]
    NoOrthogonalUsers { needed: usize },

    #[error("mapping matrix is not upper-triangular (first N columns must form an identity)")]
    NotUpperTriangular,

    #[error("general modulus; MSD optimality not guaranteed ({0})")]
    GeneralModulus(String),

    #[error("degenerate channel; resample (zero diagonal gain at position {0})")]
    DegenerateChannel(usize),

    #[error("expected {expected} bits, got {got}")]
    BitLength { expected: usize, got: usize },

    #[error("list size must be at least 1")]
    EmptyList,

    #[error("expected {expected} LLRs, got {got}")]
    LlrLength { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to write results to {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
