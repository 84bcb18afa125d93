use std::fmt;

use smoothnet::Error;

/// Failure of a subcommand, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or invalid configuration, unreadable input files.
    Config(String),
    /// A `(mu, eta)` pair violates a stability condition.
    Unstable(String),
    /// A Monte Carlo run blew past the divergence guard.
    Diverged(String),
    /// Writing results failed.
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Unstable(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Output(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Unstable(m) => write!(f, "stability violation: {m}"),
            CliError::Diverged(m) => write!(f, "numerical divergence: {m}"),
            CliError::Output(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnstableConfiguration { .. } => CliError::Unstable(e.to_string()),
            Error::NumericalDivergence { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
