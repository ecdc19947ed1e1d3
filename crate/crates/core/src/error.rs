//! Error type shared across the pipeline.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shape or size precondition violated (non-square input, mismatched
    /// dimensions, window larger than the image, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Channel-count precondition violated.
    #[error("channel error: {0}")]
    Channel(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A documented call contract was violated (wrong split, wrong label, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Feature extractor id not registered.
    #[error("unknown feature extractor `{0}`")]
    UnknownExtractor(String),

    /// Checkpoint metadata does not match the requested model spec.
    #[error("checkpoint spec mismatch: {0}")]
    SpecMismatch(String),

    /// Numeric failure: NaN loss, non-convergent matrix square root, ...
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    Empty(String),

    /// Folders that must align by filename do not.
    #[error("filename alignment error: {0}")]
    Alignment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
