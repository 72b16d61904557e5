use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, SsdmError>;

/// Coarse classification used by the command-line exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Unreadable, malformed or inconsistent input data.
    Data,
    /// Ill-conditioning, singular systems, non-convergence.
    Numerical,
}

#[derive(Debug, Error)]
pub enum SsdmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: csv error: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: json error: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("missing column \"{0}\"")]
    MissingColumn(String),

    #[error("row {row}, column \"{column}\": cannot parse {value:?} as a number")]
    ParseCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("column \"{column}\" has missing values in rows {rows:?}")]
    MissingValues { column: String, rows: Vec<usize> },

    #[error("unsupported format_version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error(
        "locallinear: bandwidth {h} too small at target {target} ({u}, {v}): {active} points with \
         positive weight, {required} needed; smallest feasible bandwidth is about {min_feasible_h:.6}"
    )]
    BandwidthTooSmall {
        target: String,
        u: f64,
        v: f64,
        h: f64,
        active: usize,
        required: usize,
        min_feasible_h: f64,
    },

    #[error("{module}: {message}")]
    Numerical {
        module: &'static str,
        message: String,
    },
}

impl SsdmError {
    pub fn class(&self) -> ErrorClass {
        match self {
            SsdmError::InvalidArgument(_) => ErrorClass::Usage,
            SsdmError::BandwidthTooSmall { .. } | SsdmError::Numerical { .. } => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn numerical(module: &'static str, message: impl Into<String>) -> Self {
        SsdmError::Numerical {
            module,
            message: message.into(),
        }
    }
}
