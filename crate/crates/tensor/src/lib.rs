//! Dense N-dimensional tensors and a tape-based reverse-mode autodiff engine.
//!
//! The engine covers what a small ResNet-style encoder/decoder needs:
//! broadcasting elementwise arithmetic, 2-D convolution and its transpose,
//! batch normalization, max and global-average pooling, and a hook for
//! custom differentiable operations (used by fused losses).
//!
//! All operations materialize their outputs. A [`Graph`] is generic over the
//! element type, so a single graph never mixes `f32` and `f64`.

mod element;
mod error;
mod gemm;
mod graph;
mod tensor;

pub mod gradcheck;
pub mod ops;

pub use element::{DType, Element};
pub use error::{Error, Result};
pub use graph::{BackwardRule, Graph, Var};
pub use ops::conv::ConvGeom;
pub use ops::norm::{BnConfig, BnMode, RunningStats};
pub use ops::pool::PoolKind;
pub use tensor::Tensor;
