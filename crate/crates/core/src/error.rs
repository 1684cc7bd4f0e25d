use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible long-tail profile: {0}")]
    InfeasibleProfile(String),

    #[error("insufficient samples for split: {}", format_shortfall(.0))]
    InsufficientSamples(Vec<Shortfall>),

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {found} in {path}")]
    UnsupportedVersion { path: PathBuf, found: u32 },

    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: u64,
        found: u64,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    #[error("non-finite value at iteration {iteration}: {detail}")]
    NonFinite { iteration: u64, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Per-class supply shortfall reported by split construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub class: usize,
    pub required: usize,
    pub available: usize,
}

fn format_shortfall(items: &[Shortfall]) -> String {
    items
        .iter()
        .map(|s| format!("class {} needs {} has {}", s.class, s.required, s.available))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics during training rather than by
    /// configuration or input files.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::DegenerateFeature(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
