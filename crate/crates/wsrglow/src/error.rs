use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error in {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("dsp error: {0}")]
    Dsp(String),

    #[error("encoder error: {0}")]
    Encoder(String),

    #[error("flow error: {0}")]
    Flow(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error in {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("training error: {0}")]
    Train(String),

    #[error("loss became non-finite at iteration {iteration}{}", last_checkpoint.as_ref().map(|p| format!("; last good checkpoint: {}", p.display())).unwrap_or_default())]
    NanLoss {
        iteration: u64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Grad(#[from] ndgrad::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn wav(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Wav { path: path.into(), reason: reason.into() }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Checkpoint { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
