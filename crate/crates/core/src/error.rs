use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("label error: label {label} outside [0, {classes})")]
    Label { label: i64, classes: usize },

    #[error("state error: {0}")]
    State(String),

    #[error("normalization degenerate: {0}")]
    NormalizationDegenerate(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("version error: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("corruption error: {0}")]
    Corruption(String),

    #[error("alignment error: part {part}: {message}")]
    Alignment { part: usize, message: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("empty evaluation")]
    EmptyEvaluation,

    #[error("convergence failure: {message} (residual {residual:e})")]
    Convergence { message: String, residual: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Short stable name for reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Label { .. } => "label",
            Error::State(_) => "state",
            Error::NormalizationDegenerate(_) => "normalization-degenerate",
            Error::Format { .. } => "format",
            Error::Version { .. } => "version",
            Error::Corruption(_) => "corruption",
            Error::Alignment { .. } => "alignment",
            Error::Degenerate(_) => "degenerate",
            Error::EmptyEvaluation => "empty-evaluation",
            Error::Convergence { .. } => "convergence",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Convergence { .. } => 4,
            _ => 3,
        }
    }
}
