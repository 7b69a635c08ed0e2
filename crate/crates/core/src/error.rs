use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("parse error in {path}{}: {message}", row_suffix(*.row))]
    Parse {
        path: PathBuf,
        row: Option<usize>,
        message: String,
    },

    #[error("validation error{}: {message}", row_suffix(*.row))]
    Validation { row: Option<usize>, message: String },

    #[error("degenerate historical fit: {0}")]
    DegenerateFit(String),

    #[error("bootstrap replicate {replicate} stayed degenerate after {attempts} redraws")]
    DegenerateResample { replicate: usize, attempts: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("prior effective sample size is undefined: {0}")]
    UndefinedPriorEss(String),

    #[error("posterior variance is undefined: {0}")]
    UndefinedVariance(String),

    #[error("non-finite density: {0}")]
    NonFiniteDensity(String),

    #[error("chain diverged at iteration {iteration}: {message}")]
    ChainDiverged { iteration: usize, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{failed} of {total} replicates failed (first error: {first})")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("no gamma in the grid keeps the type I error at or below {target}")]
    NoFeasibleGamma { target: f64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn row_suffix(row: Option<usize>) -> String {
    match row {
        Some(r) => format!(" (row {r})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Broad failure category, used by the command line front end to pick an
    /// exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::RankDeficient(_)
            | Error::NonFinite(_)
            | Error::DegenerateFit(_)
            | Error::InvalidArgument(_)
            | Error::UndefinedPriorEss(_)
            | Error::NoFeasibleGamma { .. } => ErrorKind::Validation,
            Error::DegenerateResample { .. }
            | Error::NumericalFailure(_)
            | Error::UndefinedVariance(_)
            | Error::NonFiniteDensity(_)
            | Error::ChainDiverged { .. }
            | Error::ReplicateFailures { .. } => ErrorKind::Numerical,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Validation,
    Numerical,
}

pub type Result<T> = std::result::Result<T, Error>;
