//! Forward and backward kernels on plain tensors. [`crate::Graph`] wires these
//! into the tape; they are public so callers can run inference without a tape.

pub mod conv;
pub mod elementwise;
pub mod norm;
pub mod pool;
