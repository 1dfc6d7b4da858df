use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },

    #[error("kernel of size {kernel:?} does not fit in volume of size {volume:?}")]
    KernelTooLarge { kernel: [usize; 3], volume: [usize; 3] },

    #[error("pixel ({row}, {col}) at depth {depth} m falls outside the time window (bin {bin:.2} of {n_bins})")]
    DepthOutOfWindow {
        row: usize,
        col: usize,
        depth: f64,
        bin: f64,
        n_bins: usize,
    },

    #[error("signal flux is zero everywhere; cannot calibrate photons per pixel")]
    ZeroSignal,

    #[error("factor {factor} does not divide cube dimensions {height}x{width}")]
    IndivisibleFactor { factor: usize, height: usize, width: usize },

    #[error("mask selects no pixels")]
    EmptyMask,

    #[error("solver diverged at iteration {iteration}: {backtracks} backtracking steps without sufficient decrease (objective {objective:e}, step {step:e})")]
    Diverged {
        iteration: usize,
        backtracks: usize,
        objective: f64,
        step: f64,
    },

    #[error("unsupported file format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Malformed {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
