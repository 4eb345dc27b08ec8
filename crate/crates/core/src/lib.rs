//! Training image classifiers with a deep canonical correlation analysis
//! (DCCA) regularizer that ties an intermediate layer to neural recordings.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`nn`]: a small deterministic network core with
//!   hand-written gradients (dense, conv, ReLU, max-pool, dropout).
//! * [`cca`]: classical CCA and the differentiable DCCA loss.
//! * [`data`]: CIFAR-100 binaries, neural session files, PCA
//!   pseudo-populations, surrogate datasets and a synthetic corpus.
//! * [`training`]: the joint CE + DCCA training loop and checkpoints.
//! * [`eval`]: accuracy, super-class accuracy and FGSM robustness.

pub mod cca;
pub mod data;
pub mod error;
pub mod eval;
mod linalg;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
