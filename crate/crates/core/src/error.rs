use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("time index {index} outside the field's range {first}..={last}")]
    Range { index: usize, first: usize, last: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("system is singular or nearly singular (estimated sigma_min/sigma_max = {ratio:e})")]
    Conditioning { ratio: f64 },

    #[error("iterative solver did not converge in {iterations} iterations (last relative residual {last:e})")]
    Iteration {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) | Error::Json(_) => 2,
            Error::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
