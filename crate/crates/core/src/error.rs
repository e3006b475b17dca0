use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("invalid sample {index}: {reason}")]
    InvalidSample { index: usize, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} outside bin range [{lo}, {hi}]")]
    LabelOutOfRange { label: f64, lo: f64, hi: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("csv line {line}: {reason}")]
    Csv { line: u64, reason: String },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },

    #[error("unsupported model format version {0}")]
    ModelVersion(u32),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Stable machine-readable identifier for the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument { .. } => "invalid-argument",
            Error::InvalidSample { .. } => "invalid-sample",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::Empty(_) => "empty-input",
            Error::LabelOutOfRange { .. } => "label-out-of-range",
            Error::NonFinite(_) => "non-finite",
            Error::Csv { .. } => "csv",
            Error::Diverged { .. } => "diverged",
            Error::ModelVersion(_) => "model-version",
            Error::Context { source, .. } => source.code(),
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Toml(_) => "toml",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
