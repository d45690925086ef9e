//! Convolutional and fully-connected bipartite attractor networks.
//!
//! Networks settle by layerwise updates that never increase an energy
//! function; observed visible units are constrained by evidence, and weights
//! are trained by backpropagating losses injected at every sweep.

pub mod activation;
pub mod autodiff;
pub mod datasets;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod training;

pub use activation::{activation, barrier, inverse_activation, ActivationKind};
pub use autodiff::{Eager, Graph, Tape, Var};
pub use dynamics::{
    energy, settle, ArchSpec, Evidence, EvidenceMode, LayerKind, LayerSpec, NetState, Role, SettleReport, WeightBundle,
};
pub use error::{Error, Result};
pub use tensor::{avg_pool2, conv2d_half, nn_upsample2, reverse_kernel, ConvKernel, Mask, Tensor};
