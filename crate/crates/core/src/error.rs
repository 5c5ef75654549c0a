use thiserror::Error;

/// Broad class of a failure, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Data,
    Config,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("degenerate spatial design: {0}")]
    DegenerateHull(String),

    #[error("{axis} = {value} lies outside the supported range [{lo}, {hi}]")]
    OutOfRange {
        axis: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error(
        "the unpenalized component is not identifiable from the data: {0} \
         (e.g. all observations share one location, or too few distinct sites)"
    )]
    Unidentifiable(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("criterion undefined at lambda = {lambda}: {reason}")]
    CriterionUndefined { lambda: f64, reason: String },

    #[error("PDE solver became unstable at step {step} (t = {time})")]
    Unstable { step: usize, time: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_)
            | Error::Csv(_)
            | Error::MissingColumn(_)
            | Error::Row { .. }
            | Error::Data(_)
            | Error::DegenerateHull(_)
            | Error::OutOfRange { .. } => ErrorKind::Data,
            Error::Config(_) | Error::Unsupported(_) => ErrorKind::Config,
            Error::Unidentifiable(_)
            | Error::Singular(_)
            | Error::CriterionUndefined { .. }
            | Error::Unstable { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
