use std::path::PathBuf;

/// Errors produced by ingestion, estimation and evaluation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A row of an input table could not be interpreted. Lines are 1-based and
    /// count the header.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    InvalidParameter { field: &'static str, message: String },
    /// A configuration entry is malformed, unknown or duplicated.
    #[error("config line {line}: {key}: {message}")]
    Config { line: usize, key: String, message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no background mass")]
    NoBackgroundMass,
    #[error("conditional intensity is zero for every event")]
    ZeroIntensity,
    #[error("supercritical cascade: more than {cap} events generated")]
    SupercriticalCascade { cap: usize },
    #[error("degenerate labels: need at least one positive and one negative")]
    DegenerateLabels,
    #[error("unsupported model format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error("malformed model document: {0}")]
    ModelDocument(#[from] serde_json::Error),
    #[error("model was not produced by a fused fit")]
    NotFused,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
