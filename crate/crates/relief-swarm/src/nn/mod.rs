//! Minimal differentiable-compute substrate: dense / conv / pooling /
//! rectifier layers with hand-written backward passes, an RMSProp
//! optimizer, parameter (de)serialization, and a finite-difference
//! gradient checker.
//!
//! Backward routines *accumulate* into the gradient buffers they are
//! given, so shared parameters (the agent network) sum naturally.

mod checkpoint;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_params, save_params, CheckpointDtype, CheckpointHeader};
pub use gradcheck::grad_check;
pub use layers::{
    avg_pool2, avg_pool2_backward, conv2d, conv2d_backward, dense, dense_backward, relu,
    relu_backward,
};
pub use optim::RmsProp;
pub use params::{Gradients, ParameterSet};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter key mismatch: {0}")]
    KeyMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("checkpoint format: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
