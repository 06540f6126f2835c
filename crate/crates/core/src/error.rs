use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("line {line}: `{field}` has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: `{field}` contains a non-finite value")]
    NonFinite { line: usize, field: &'static str },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("vector length mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },

    #[error("zero-norm vector has no cosine direction")]
    ZeroNorm,

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("covariance inversion failed: residual {residual:e}")]
    InversionFailed { residual: f64 },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("no entity spans in target corpus")]
    NoSpans,

    #[error("sample `{id}` has no pseudolabel")]
    MissingPseudolabel { id: String },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("unknown sample id `{0}`")]
    UnknownId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
