use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },

    #[error("config field `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("unknown {kind} `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("missing {what} at {}: run `respa {step}` first", path.display())]
    MissingDependency {
        what: &'static str,
        step: &'static str,
        path: PathBuf,
    },

    #[error("checkpoint {} does not match its manifest hash", path.display())]
    StaleCheckpoint { path: PathBuf },

    #[error("{} exists with different contents; pass --force to overwrite", path.display())]
    WouldOverwrite { path: PathBuf },

    #[error("{}: line {line}: {message}", path.display())]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] respa::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
