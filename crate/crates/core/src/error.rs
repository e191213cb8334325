use std::path::PathBuf;

/// Errors produced by the simulation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scenario: {0}")]
    Parse(String),
    #[error("invalid scene: {0}")]
    Validation(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point ({x}, {y}) lies outside the domain")]
    OutOfDomain { x: f64, y: f64 },
    #[error("no free area left to place particles")]
    EmptyFreeArea,
    #[error("cell {0} has no neighbour with a finite potential")]
    NoFiniteNeighbour(usize),
    #[error("goal region covers no grid cell")]
    EmptyGoal,
    #[error("no obstacle-free route from ({x}, {y}) to the goal")]
    Unreachable { x: f64, y: f64 },
    #[error("zero diagonal entry in row {0}")]
    ZeroDiagonal(usize),
    #[error("no feasible active set")]
    Infeasible,
    #[error("no root in bracket [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("step {step} (t = {time:.3} s): {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
