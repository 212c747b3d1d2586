//! Recursive-least-squares training with multi-shot structured pruning for
//! fully-connected and convolutional networks.
//!
//! Each learnable layer keeps an inverse input-autocorrelation matrix `P`
//! that preconditions its momentum update and, at epoch boundaries where the
//! loss has recovered, ranks its input channels or nodes for removal.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod network;
pub mod prune;
pub mod rls;
pub mod tensor;
pub mod train;

pub use config::{Architecture, OptimizerKind, TrainConfig};
pub use error::{Error, Result};
pub use network::{Network, NetworkSpec};
pub use tensor::{Float, Matrix, Tensor};
pub use train::{evaluate, train, Trainer};
