//! Training kit for spectrally constrained networks.
//!
//! * [`tensor`] and [`rng`]: dense `f64` tensors and a seeded generator.
//! * [`spectral`]: Jacobi SVD, orthogonal initialization, singular value
//!   bounding and the gain-bound checker for row-scaled orthogonal matrices.
//! * [`network`]: hand-written forward/backward layers, batch normalization
//!   and the plain ConvNet / MLP builders.
//! * [`optim`]: momentum SGD, the learning-rate schedule, SVB/BBN
//!   projections and the training loop.
//! * [`lineardyn`]: deep-linear-network gradients, decoupled dynamics and
//!   error back-propagation analysis.
//! * [`harness`]: datasets, checkpoints, config parsing and the commands
//!   behind the `svb` binary.
//! * [`oracle`] and [`verify`]: independent reference routines and the
//!   randomized property suites built on them.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod lineardyn;
pub mod network;
pub mod optim;
pub mod oracle;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
