use thiserror::Error;

use crate::grid::Cell;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cell ({}, {}) is outside the {width}x{height} map", .cell.x, .cell.y)]
    OutOfBounds {
        cell: Cell,
        width: usize,
        height: usize,
    },

    #[error("duplicate training cell ({}, {})", .0.x, .0.y)]
    DuplicateCell(Cell),

    #[error("covariance factorization failed at maximum jitter {jitter:e}")]
    Factorization { jitter: f64 },

    #[error("target configuration generation failed: {0}")]
    Generation(String),

    #[error("allocation precondition violated: {modules} modules for {spots} spots")]
    TooFewModules { modules: usize, spots: usize },

    #[error("module {module} blocked on the way to spot {spot} at ({}, {})", .cell.x, .cell.y)]
    BlockedArrival {
        module: usize,
        spot: usize,
        cell: Cell,
    },

    #[error("simulation exceeded the step cap of {0}")]
    StepCap(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
