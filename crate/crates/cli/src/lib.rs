//! Command-line surface of the toolkit: argument definitions, the flat
//! pipeline configuration and the command implementations behind `s2fuse`.

pub mod cli;
pub mod commands;
pub mod config;
pub mod pipeline;

use s2fuse_core::Error;

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::Parameter(_) => EXIT_USAGE,
                Error::Degenerate(_) => EXIT_DEGENERATE,
                Error::Dimension(_) | Error::Domain(_) | Error::Format(_) | Error::Io(_) => EXIT_DATA,
            },
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tags an error with the pipeline stage it came from.
pub(crate) fn in_stage<T>(stage: &'static str, r: CliResult<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Stage { stage, source: Box::new(e) })
}
