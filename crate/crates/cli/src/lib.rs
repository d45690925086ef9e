//! Training, completion, evaluation and self-check commands for the `cban`
//! binary, plus the run-config and checkpoint formats they share.

pub mod check;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;
pub mod task;

use std::path::PathBuf;

use thiserror::Error;

/// Exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// A check suite failed, or settling did not converge.
pub const EXIT_FAILED: i32 = 1;
/// Bad arguments, unreadable input or any other I/O problem.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("missing path: {}", .0.display())]
    MissingPath(PathBuf),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] cban::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Sizes the global thread pool from `CBAN_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("CBAN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("CBAN_THREADS must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(CliError::Usage("CBAN_THREADS must be at least 1".into()));
    }
    // Fails only if the pool was already built, in which case it stays as is.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
