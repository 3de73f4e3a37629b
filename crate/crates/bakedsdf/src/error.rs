use std::path::{Path, PathBuf};

/// Errors surfaced by the pipeline. [`PipelineError::exit_code`] separates
/// user errors (bad input, stale artifacts) from internal failures.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("missing upstream artifact {}: run `{stage}` first", path.display())]
    Missing { path: PathBuf, stage: String },
    #[error("stale or modified input {}: {message}", path.display())]
    Stale { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] bakedsdf_core::Error),
}

impl PipelineError {
    /// 1 for user errors, 2 for internal errors.
    pub fn exit_code(&self) -> i32 {
        use bakedsdf_core::Error as E;
        match self {
            PipelineError::Core(E::InvalidConfig(_) | E::SizeMismatch(..)) => 1,
            PipelineError::Core(_) => 2,
            _ => 1,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        PipelineError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Attaches a path to an IO error.
pub(crate) fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_at(path))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_at(path))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| PipelineError::format(path, e.to_string()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write(path, &bytes)
}
