//! Experiment harness behind the `fedsim` binary.

use std::path::PathBuf;

use thiserror::Error;

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

pub use commands::{run, Command, CommonArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] fedsim_core::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for divergence, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        use fedsim_core::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } => 4,
            CliError::Core(E::DivergedClient { .. } | E::Diverged { .. }) => 3,
            CliError::Core(E::Idx(_)) => 4,
            CliError::Core(_) => 2,
        }
    }
}
