use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("argument {value} outside the evaluation range [0, {max}]")]
    Range { value: f64, max: f64 },

    #[error("evaluation overflow at cell {cell}: argument {value} exceeds {max}")]
    CellOverflow { cell: usize, value: f64, max: f64 },

    #[error("supremum not bracketed: supremand still increasing at z_hi = {z_hi} for y = {y}")]
    Bracketing { y: f64, z_hi: f64 },

    #[error("no convergence within {iterations} iterations (last bracket [{lo}, {hi}])")]
    NonConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("grid mismatch: {0}")]
    Shape(String),

    #[error("operation not supported for viscosity law {0}")]
    UnsupportedLaw(String),

    #[error("degenerate sampling: {0}")]
    Sampling(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("time step {dt} exceeds the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("negative density {value} at cell {cell} (t = {t}) after {retries} dt-halvings")]
    NegativeDensity {
        cell: usize,
        value: f64,
        t: f64,
        retries: usize,
    },

    #[error("non-finite value at cell {cell} (t = {t})")]
    NonFinite { cell: usize, t: f64 },

    #[error("step limit of {0} reached before the end time")]
    StepLimit(usize),

    #[error("incompatible manufactured pair: continuity residual {residual} exceeds {bound}")]
    IncompatiblePair { residual: f64, bound: f64 },

    #[error("missing time derivative of the reference {0}")]
    MissingTimeDerivative(&'static str),

    #[error("snapshot times are not aligned: {0}")]
    Alignment(String),

    #[error("empty series")]
    EmptySeries,

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
