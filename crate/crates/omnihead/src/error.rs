use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),
    #[error("empty batch for {0}")]
    EmptyBatch(&'static str),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("file format error in {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
