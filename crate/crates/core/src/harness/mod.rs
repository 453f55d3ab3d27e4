//! Experiment driver: configured training runs, loss comparisons, scaling
//! factor sweeps, gradient checks, and loss-curve / convexity tables.

pub mod analysis;
pub mod config;
pub mod experiments;
pub mod gradcheck;
pub mod report;
pub mod train;

use thiserror::Error;

pub use analysis::{emit_curves, probe_convexity_table, CurvesSummary};
pub use config::{DatasetSpec, IdxPair, ModelSpec, TrainConfig, MNIST_SUBSET_DIR};
pub use experiments::{compare, sweep_a, CompareEntry, Comparison, Sweep, SweepRow};
pub use gradcheck::{gradcheck, gradcheck_model, GradcheckEntry, GradcheckReport, GRADCHECK_TOLERANCE};
pub use report::{EpochRecord, RepeatedRun, RunReport, RunSummary};
pub use train::{evaluate, train, train_model, train_repeated, Evaluation};

use crate::data::DataError;
use crate::losses::LossError;
use crate::nn::NnError;
use crate::optim::OptimError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite training loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("{0}")]
    InvalidRequest(String),
    #[error("gradient check failed: max relative error {max_rel_err:e} exceeds {tolerance:e}")]
    GradcheckFailed { max_rel_err: f64, tolerance: f64 },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
