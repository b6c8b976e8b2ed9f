use std::path::{Path, PathBuf};

use stylebind_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error{}: {message} (at byte offset {offset})", file.as_ref().map(|p| format!(" in {}", p.display())).unwrap_or_default())]
    Format { file: Option<PathBuf>, offset: usize, message: String },
    #[error("I/O error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn format(offset: usize, message: impl Into<String>) -> Self {
        CliError::Format { file: None, offset, message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Attaches a file name to a format error.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            CliError::Format { file: None, offset, message } => {
                CliError::Format { file: Some(path.to_path_buf()), offset, message }
            }
            other => other,
        }
    }

    /// Process exit status: 2 usage or configuration, 3 data or format,
    /// 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Format { .. } | CliError::Io { .. } | CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidArgument(m) => CliError::Config(m),
            CoreError::Vocabulary { word } => CliError::Config(format!("word `{word}` is not in the vocabulary")),
            CoreError::Numeric(m) => CliError::Numeric(m),
            CoreError::Configuration(m) => CliError::Config(m),
        }
    }
}

/// In-memory buffers only; file IO goes through [`CliError::io`].
impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io { path: PathBuf::from("<memory>"), source: e }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
