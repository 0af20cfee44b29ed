use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by what the caller can do about them: bad input data,
/// numerical breakdown, or plain I/O. [`Error::kind`] exposes that grouping.
#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic in {path}: expected \"SEMB\"")]
    BadMagic { path: PathBuf },
    #[error("unsupported embedding file version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("unknown sequence kind code {code}")]
    UnknownKind { code: u16 },
    #[error("truncated payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("empty sequence: length and dim must both be at least 1")]
    EmptySequence,
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("zero-norm row {row}")]
    ZeroNorm { row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("alignment infeasible: {0}")]
    Infeasible(String),
    #[error("too few slots: {slots} slots for {steps} steps")]
    TooFewSlots { slots: usize, steps: usize },
    #[error("brute-force enumeration limited to K <= 6 and N <= 7, got {rows}x{cols}")]
    SizeBoundExceeded { rows: usize, cols: usize },
    #[error("non-finite value in {0}")]
    Numerical(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Coarse classification used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numerical(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
