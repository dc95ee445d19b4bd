//! One-class wafer-map defect detection.
//!
//! Three trainable models over 64x64 categorical wafer maps: soft-boundary
//! Deep SVDD, a plain adversarial autoencoder, and an AAE whose latent prior
//! is sampled from the learned DSVDD hypersphere with in/out-of-sphere label
//! assignment. Everything runs on a hand-rolled f32 tensor core with
//! reverse-mode autodiff; no BLAS, no framework.

pub mod cli;
pub mod eval;
pub mod nn;
pub mod prior;
pub mod tensor;
pub mod train;
pub mod wafer;

use std::fmt;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Crate-level error, classified for the CLI exit-code contract.
#[derive(Debug)]
pub enum Error {
    /// Malformed or inconsistent data files / datasets (exit 3).
    Data(String),
    /// Bad configuration, schema violations, incompatible checkpoints (exit 4).
    Config(String),
    /// NaN/Inf or other numeric-contract failures (exit 5).
    Numeric(String),
    /// Command-line misuse (exit 2).
    Usage(String),
    /// I/O failure, reported as data class (exit 3).
    Io(std::io::Error),
}

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::Data(_) | Error::Io(_) => "data",
            Error::Config(_) => "config",
            Error::Numeric(_) => "numeric",
            Error::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Config(_) => 4,
            Error::Numeric(_) => 5,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Data(m) | Error::Config(m) | Error::Numeric(m) | Error::Usage(m) => {
                f.write_str(m)
            }
            Error::Io(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<tensor::TensorError> for Error {
    fn from(e: tensor::TensorError) -> Self {
        match e {
            tensor::TensorError::NonFinite { .. } => Error::Numeric(e.to_string()),
            other => Error::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
