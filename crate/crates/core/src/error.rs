use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration (divisibility, ranges, missing files).
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API precondition (length mismatch, wrong block touched).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input outside the mathematical domain of an operator (e.g. non-positive permeability).
    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "numerical rank deficiency: retained eigenvalue {index} is {value:e}; lower n_c (at most {usable} usable modes)"
    )]
    NumericalRank {
        index: usize,
        value: f64,
        usable: usize,
    },

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The coupling does not give a one-to-one map between coefficients and fields.
    #[error("not one-to-one: {0}")]
    NotOneToOne(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format(_) | Error::Io(_) => 1,
            _ => 2,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
