use thiserror::Error;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<gated_apd::Error> for CliError {
    fn from(e: gated_apd::Error) -> Self {
        use gated_apd::Error as E;
        match e {
            E::Config(_) | E::Argument(_) | E::Resolution(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
