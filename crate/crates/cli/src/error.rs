use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),

    #[error("config key {key}: {message}")]
    Config { key: String, message: String },

    #[error("config line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: pading_core::Error,
    },

    #[error(transparent)]
    Core(#[from] pading_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("report {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("report {path} has schema version {found}, expected {expected}")]
    Schema { path: PathBuf, found: u32, expected: u32 },

    #[error("{failed} of {total} verification checks failed")]
    VerificationFailed { failed: usize, total: usize },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 verification failure, 3 divergence, 2 anything else.
    pub fn exit_code(&self) -> i32 {
        let core = match self {
            CliError::VerificationFailed { .. } => return 1,
            CliError::Stage { source, .. } | CliError::Core(source) => source,
            _ => return 2,
        };
        match core {
            pading_core::Error::Divergence { .. } => 3,
            pading_core::Error::Verification(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags core errors with the stage they came from.
pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T> StageContext<T> for pading_core::Result<T> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
