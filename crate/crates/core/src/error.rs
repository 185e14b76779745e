use thiserror::Error;

use crate::data::DataError;
use crate::fusion::FusionError;

use crate::tensor::TensorError;

/// Crate-wide error. Each variant maps to a process exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    /// 1 usage, 2 data, 3 numerical, 4 invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Fusion(_) => 1,
            Error::Data(_) => 2,
            Error::Numerical(_) => 3,
            Error::Tensor(_) | Error::Invariant(_) => 4,
        }
    }

    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Fusion(_) => "usage",
            Error::Data(_) => "data",
            Error::Numerical(_) => "numerical",
            Error::Tensor(_) | Error::Invariant(_) => "invariant",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
