use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config-not-found: {0}")]
    ConfigNotFound(PathBuf),

    #[error("config-parse: {0}")]
    ConfigParse(String),

    #[error("unknown-key: `{0}` is not a configuration key")]
    UnknownKey(String),

    #[error("type-mismatch: `{key}` expects {expected}, found {found}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        found: &'static str,
    },

    #[error("constraint-violation: `{key}` {reason}")]
    Constraint { key: String, reason: String },

    #[error("unknown-preset: `{0}` (see list-presets)")]
    UnknownPreset(String),

    #[error("unknown-plot-kind: `{0}`")]
    UnknownPlotKind(String),

    #[error("missing-series: {0:?} absent from the given runs")]
    MissingSeries(Vec<String>),

    #[error("{0}")]
    Core(#[from] rlvr_core::Error),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed run directory {path}: {reason}")]
    RunFormat { path: PathBuf, reason: String },
}

pub type LabResult<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn io(path: impl AsRef<Path>) -> impl FnOnce(std::io::Error) -> LabError {
        let path = path.as_ref().to_path_buf();
        move |source| LabError::Io { path, source }
    }

    /// Process exit code: 2 for configuration, 3 for numerics, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        use rlvr_core::Error as E;
        match self {
            LabError::ConfigNotFound(_)
            | LabError::ConfigParse(_)
            | LabError::UnknownKey(_)
            | LabError::TypeMismatch { .. }
            | LabError::Constraint { .. }
            | LabError::UnknownPreset(_)
            | LabError::UnknownPlotKind(_) => 2,
            LabError::Core(E::InvalidConfig(_) | E::InvalidK { .. }) => 2,
            LabError::Core(E::Checkpoint(_) | E::SuiteFormat { .. } | E::Aborted(_)) => 4,
            LabError::Core(_) => 3,
            LabError::Io { .. } | LabError::RunFormat { .. } | LabError::MissingSeries(_) => 4,
        }
    }
}
