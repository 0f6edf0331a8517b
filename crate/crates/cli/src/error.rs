use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<ergi_core::Error> for CliError {
    fn from(e: ergi_core::Error) -> Self {
        use ergi_core::Error as E;
        match e {
            E::InvalidInput(_) | E::LengthMismatch { .. } | E::InsufficientData { .. } | E::Index(_) | E::ZeroVariance => {
                CliError::Data(e.to_string())
            }
            E::Domain(_) | E::BlowUp { .. } | E::NonConvergence(_) | E::Numerical(_) | E::IdenticalForecasts => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}
