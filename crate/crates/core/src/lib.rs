//! ACNet: a three-branch RGBD semantic segmentation network.
//!
//! Separate RGB and depth ResNet encoders run uninterrupted; at every stage a
//! channel-attention module (ACM) gates each branch's features, and the gated
//! features are summed into a third, fusion encoder. A skip-connected decoder
//! emits five side outputs used for deep supervision.
//!
//! The crate also carries everything needed to train and inspect the model at
//! desk scale: a synthetic RGBD scene generator, a PNG dataset loader,
//! focal loss, mIoU evaluation, SGD with checkpointing, and an attention
//! statistics report.

pub mod acm;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod params;
pub mod train;

pub use error::{Error, Result};
