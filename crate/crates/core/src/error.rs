use std::path::PathBuf;

use thiserror::Error;

use crate::period::YearMonth;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,

    #[error("schema error: required column `{column}` not found in header")]
    MissingColumn { column: String },

    #[error("no feature rows could be built for {as_of}")]
    EmptyTable { as_of: YearMonth },

    #[error("period {0} not present in table")]
    PeriodNotFound(YearMonth),

    #[error("shape mismatch: expected {expected}, got {actual} ({context})")]
    Shape {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("all training weights are zero or the table is empty")]
    DegenerateWeights,

    #[error("invalid weight {value} on row {row}")]
    InvalidWeight { row: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no budget for product `{product}` at {period}")]
    MissingBudget { product: String, period: YearMonth },

    #[error("no weight for row ({facility}, {product}, {period})")]
    MissingWeight {
        facility: String,
        product: String,
        period: YearMonth,
    },

    #[error("LP solver hit the iteration limit ({0} pivots)")]
    IterationLimit(usize),

    #[error("LP reported infeasible (phase-one residual {0})")]
    Infeasible(f64),

    #[error("invalid allocation problem: {0}")]
    InvalidProblem(String),

    #[error("model format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

/// Coarse error classes used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Config,
    Data,
    Solver,
    Io,
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorKind::Input => "input",
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Solver => "solver",
            ErrorKind::Io => "io",
        })
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EmptyInput
            | Error::MissingColumn { .. }
            | Error::Parse { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Format(_) => ErrorKind::Input,
            Error::Config(_) | Error::MissingBudget { .. } | Error::Toml(_) => ErrorKind::Config,
            Error::EmptyTable { .. }
            | Error::PeriodNotFound(_)
            | Error::Shape { .. }
            | Error::DegenerateWeights
            | Error::InvalidWeight { .. }
            | Error::MissingWeight { .. }
            | Error::InvalidProblem(_) => ErrorKind::Data,
            Error::IterationLimit(_) | Error::Infeasible(_) => ErrorKind::Solver,
            Error::File { .. } | Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn shape(expected: usize, actual: usize, context: &'static str) -> Self {
        Error::Shape {
            expected,
            actual,
            context,
        }
    }
}
