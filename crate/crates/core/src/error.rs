use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("encoding error: feature `{feature}` has no category `{value}`")]
    Encoding { feature: String, value: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("model capability error: {0}")]
    Capability(String),

    #[error("constraint audit failed: {0}")]
    Audit(String),

    #[error("unsupported model format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config file error: {0}")]
    TomlParse(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
