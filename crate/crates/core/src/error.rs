use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("date {date} is outside the series span {start}..={end}")]
    OutOfRange {
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },

    #[error("invalid split boundary {boundary}: must lie strictly inside {start}..={end}")]
    InvalidSplit {
        boundary: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },

    #[error("invalid exclusion mask: {0}")]
    InvalidMask(String),

    #[error("invalid calendar: {0}")]
    Calendar(String),

    #[error("no Spring Festival start registered for year {year} (needed for {date})")]
    MissingFestival { year: i32, date: NaiveDate },

    #[error("invalid breakpoint plan: {0}")]
    InvalidPlan(String),

    #[error("degenerate design matrix: column group(s) {groups} are linearly dependent on the others")]
    DegenerateDesign { groups: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("alignment error: {0}")]
    Alignment(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::FileNotFound(_) | Error::Config(_) | Error::Json { .. } | Error::InvalidPlan(_) | Error::Calendar(_) => {
                ErrorKind::Config
            }
            Error::DegenerateDesign { .. } | Error::Divergence(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
