//! Channel-to-environment reconstruction from wireless multipath parameters.
//!
//! The crate covers the full synthetic pipeline: scene generation, array
//! channel synthesis, SAGE multipath estimation, point-cloud preparation, the
//! multi-stage reconstruction network and its baselines, and evaluation.

pub mod channel;
pub mod config;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod kdtree;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod prep;
pub mod sage;
pub mod scene;
pub mod seed;

use thiserror::Error;

pub use numkit::NumError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code: 1 for invalid input or configuration, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Json(_) | Error::Num(NumError::Config(_)) => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
