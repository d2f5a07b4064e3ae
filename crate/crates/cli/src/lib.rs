//! Pipeline orchestration behind the `skt-hang` binary.
//!
//! Each stage reads the manifests of the stages it depends on, refuses
//! inputs produced under a different configuration digest or pipeline
//! version, and writes its own manifest listing the SHA-256 of every file it
//! produced. A stage whose manifest already matches is skipped.

pub mod artifacts;
pub mod config;
pub mod stages;

use thiserror::Error;

pub use config::PipelineConfig;
pub use stages::{run, Command, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {field}: {reason}")]
    ConfigInvalid { field: String, reason: String },
    #[error("stale artifact {artifact}: expected {expected}, found {found}")]
    StaleArtifact {
        artifact: String,
        expected: String,
        found: String,
    },
    #[error("missing artifact {0}; run the upstream stage first")]
    MissingArtifact(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Pipeline(String),
}

impl CliError {
    /// Process exit status for each error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Pipeline(_) => 1,
            CliError::ConfigInvalid { .. } => 2,
            CliError::StaleArtifact { .. } => 3,
            CliError::MissingArtifact(_) => 4,
            CliError::Io { .. } => 5,
        }
    }

    pub(crate) fn io(context: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.to_string(),
            source,
        }
    }

    pub(crate) fn pipeline(e: impl std::fmt::Display) -> Self {
        CliError::Pipeline(e.to_string())
    }
}
