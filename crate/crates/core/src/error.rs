use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid mesh{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    InvalidMesh { line: Option<usize>, message: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("bad magic in {what}: expected {expected:?}, found {found:?}")]
    BadMagic {
        what: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("{what} version mismatch: expected {expected}, found {found}")]
    VersionMismatch {
        what: &'static str,
        expected: u32,
        found: u32,
    },

    #[error("truncated {what}: needed {needed} more bytes at offset {offset}")]
    Truncated {
        what: &'static str,
        offset: usize,
        needed: usize,
    },

    #[error("content hash mismatch: cache was built for a different mesh or k")]
    HashMismatch,

    #[error("vertex count mismatch: {context} has {found} vertices, mesh has {expected}")]
    VertexCountMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty mask")]
    EmptyMask,

    #[error("zero-variance mesh: all vertices coincide")]
    ZeroVariance,

    #[error("vertex {vertex} has zero mass (not referenced by any face)")]
    ZeroMass { vertex: usize },

    #[error("eigensolver did not converge after {iterations} iterations (worst relative residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: String,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Numerical failures (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::NonFinite(_) => true,
            Error::Sample { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
