use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors produced anywhere in the pipeline.
///
/// [`Error::category`] gives a stable short tag used by the CLI for exit
/// reporting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),
    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("unsupported orientation: {0}")]
    UnsupportedOrientation(String),
    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("ROI box out of bounds: {0}")]
    OutOfBounds(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate image: {0}")]
    DegenerateImage(String),
    #[error("rank-deficient design matrix")]
    RankDeficient,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid probability vector for case {case_id}: {reason}")]
    InvalidProbability { case_id: String, reason: String },
    #[error("CSV error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("case id mismatch: {0}")]
    CaseMismatch(String),
    #[error("leakage detected: test case {case_id} appears in the training list of {artifact}")]
    Leakage { artifact: String, case_id: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Csv {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Opening a CSV file: I/O failures stay I/O errors.
    pub fn csv_open(path: impl Into<PathBuf>, e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(source) = e.into_kind() {
                return Error::io(path, source);
            }
            unreachable!("is_io_error implies an Io kind");
        }
        Error::csv(path, e)
    }

    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) | Error::UnsupportedDatatype(_) => "format",
            Error::UnsupportedOrientation(_) | Error::GeometryMismatch(_) => "geometry",
            Error::EmptyMask | Error::OutOfBounds(_) => "roi",
            Error::InvalidInput(_) | Error::DegenerateImage(_) => "input",
            Error::RankDeficient | Error::InsufficientData(_) => "statistics",
            Error::InvalidProbability { .. } => "probability",
            Error::Csv { .. } | Error::Json(_) => "parse",
            Error::CaseMismatch(_) => "case-mismatch",
            Error::Leakage { .. } => "leakage",
        }
    }
}
