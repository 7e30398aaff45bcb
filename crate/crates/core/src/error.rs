use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot normalize the zero state")]
    ZeroState,

    #[error("state is not normalized (norm = {norm})")]
    NotNormalized { norm: f64 },

    #[error("homodyne density vanishes at x = {x}")]
    ZeroDensity { x: f64 },

    #[error("invalid window geometry: {0}")]
    InvalidGeometry(String),

    #[error("bad detector input: {0}")]
    BadInput(String),

    #[error("recurrence pole: c = {c} at stage {stage}")]
    PoleError { stage: usize, c: f64 },

    #[error("cascade aborted on an asymmetric outcome at stage {stage}")]
    CascadeAborted { stage: usize },

    #[error("state is not in the four-photon family: {0}")]
    NotInFamily(String),

    #[error("truncation too coarse: lost probability mass {loss:e} exceeds 1e-6")]
    TruncationTooCoarse { loss: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::Io { .. } | Error::Json(_) => 1,
            _ => 3,
        }
    }
}
