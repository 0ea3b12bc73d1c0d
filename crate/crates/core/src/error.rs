use std::path::PathBuf;

use thiserror::Error;

use crate::subproblem::ipm::IpmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot invert the zero quaternion")]
    ZeroQuaternion,

    #[error("quaternion is not unit: norm = {norm}")]
    NotUnit { norm: f64 },

    #[error("logarithm undefined at the antipode (real part {real_part})")]
    LogSingularity { real_part: f64 },

    #[error("vector is not tangent at the base point (inner product {inner})")]
    NotTangent { inner: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("perturbation {index} is not based at the corresponding trajectory point")]
    BasePointMismatch { index: usize },

    #[error("at timestep {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("Hessian block {block} is not positive semi-definite (min eigenvalue {min_eigenvalue})")]
    NonConvexHessian { block: usize, min_eigenvalue: f64 },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("sub-problem solver failed: {0}")]
    Solver(#[from] IpmError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn at_step(index: usize) -> impl FnOnce(Error) -> Error {
        move |source| Error::AtStep {
            index,
            source: Box::new(source),
        }
    }
}
