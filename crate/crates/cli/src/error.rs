use stsmooth::ErrorKind;
use thiserror::Error;

/// A failure with the process exit status it maps to.
#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Data,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            kind: ErrorKind::Config,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        exit_code(self.kind)
    }
}

pub fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Data => 2,
        ErrorKind::Config => 3,
        ErrorKind::Numerical => 4,
    }
}

impl From<stsmooth::Error> for CliError {
    fn from(e: stsmooth::Error) -> Self {
        CliError {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(format!("I/O error: {e}"))
    }
}
