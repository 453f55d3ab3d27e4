//! Adma loss, a from-scratch trainable network, and an experiment harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use losses::{AdmaParams, LossFunction, LossKind};
pub use nn::Model;
pub use rng::Rng;
pub use tensor::Tensor;
