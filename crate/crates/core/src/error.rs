use thiserror::Error;

use crate::data::DataError;
use crate::harness::HarnessError;
use crate::losses::LossError;
use crate::nn::NnError;
use crate::optim::OptimError;
use crate::tensor::TensorError;

/// Crate-wide error; each module keeps its own enum and converts into this one.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

pub type Result<T> = std::result::Result<T, Error>;
