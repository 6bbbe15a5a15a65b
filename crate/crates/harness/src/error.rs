use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {frames} frames but {boxes} ground-truth boxes")]
    CountMismatch { path: PathBuf, frames: usize, boxes: usize },
    #[error("{0}")]
    Core(#[from] bacf_unroll::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported checkpoint format version {0}")]
    UnknownVersion(u32),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
