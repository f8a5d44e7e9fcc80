//! Layers, batch normalization and sequential models.

pub mod batchnorm;
pub mod layers;
pub mod model;

pub use batchnorm::{bn_as_linear, BnMode, BnState, BN_EPS};
pub use layers::{softmax_xent, ConvLayer, LinearLayer};
pub use model::{Arch, Layer, Network, ParamKind};
