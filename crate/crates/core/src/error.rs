use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A malformed record in a text format.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Bad magic, version, or a truncated binary payload.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed input whose contents are inconsistent (index out of range,
    /// count mismatch, accessor outside its buffer).
    #[error("structural error: {0}")]
    Structural(String),

    #[error("unsupported feature: {0}")]
    Unsupported(String),

    /// A value outside its allowed domain (unknown label, negative weight...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing asset `{0}`")]
    MissingAsset(String),

    #[error("alignment failed: {0}")]
    AlignmentFailed(String),

    #[error("tracking lost: {0}")]
    TrackingLost(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("i/o error on {path}: {source}")]
    PathIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::PathIo { path, source }
    }
}
