//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised anywhere in the modelling and pricing pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("symbol {symbol} out of range for {bits}-bit alphabet")]
    SymbolOutOfRange { symbol: u32, bits: u32 },

    #[error("SVD failed on a {rows}x{cols} matrix: {reason}")]
    SvdNonConvergence { rows: usize, cols: usize, reason: String },

    #[error("zero amplitude for data row {row}")]
    ZeroAmplitude { row: usize },

    #[error("partition function is zero or non-finite ({0})")]
    DegenerateModel(f64),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("sampling failed: all conditional weights vanish after prefix {prefix:?}")]
    ImpossiblePrefix { prefix: Vec<u32> },

    #[error("no implied volatility: {0}")]
    NoImpliedVol(String),

    #[error("model file format error in field `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(field: &str, message: impl Into<String>) -> Self {
        Error::Format { field: field.to_string(), message: message.into() }
    }

    /// Process exit code for the CLI: 2 for data or contract errors, 3 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SvdNonConvergence { .. }
            | Error::ZeroAmplitude { .. }
            | Error::DegenerateModel(_)
            | Error::NonFinite(_)
            | Error::ImpossiblePrefix { .. }
            | Error::NoImpliedVol(_) => 3,
            _ => 2,
        }
    }
}
