//! Command-line driver for `neumann-core`, with the MEDIT mesh and solution
//! formats and CSV reports.

pub mod cli;
pub mod config;
pub mod medit;
pub mod report;
pub mod run;

pub use cli::{Cli, Command};
pub use run::{parse_args, run};

/// Failures of the driver, each mapped to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] config::ConfigError),

    #[error(transparent)]
    Numerical(#[from] neumann_core::Error),

    #[error(transparent)]
    Medit(#[from] medit::MeditError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for usage and configuration errors, 1 for failures during a run.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Clap(e) => e.exit_code() as u8,
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
