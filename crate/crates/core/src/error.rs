use std::path::PathBuf;

use thiserror::Error;

use crate::genome::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid genome: {}", join_violations(.0))]
    InvalidGenome(Vec<Violation>),

    #[error("point ({x}, {y}) is outside the terrain bounds")]
    OutOfBounds { x: f64, y: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("archive is empty")]
    EmptyArchive,

    #[error("need {need} seeds, have {have}")]
    InfeasibleSeeds { need: usize, have: usize },

    #[error("numeric fault in simulation at step {step}: {what}")]
    NumericFault { step: usize, what: &'static str },

    #[error("simulation quota exhausted for environment {0}")]
    Quota(String),

    #[error("a simulation is already running for this session")]
    Busy,

    #[error("sequence error: {0}")]
    Sequence(String),

    #[error("manifest mismatch in {path}: {detail}")]
    ManifestMismatch { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
