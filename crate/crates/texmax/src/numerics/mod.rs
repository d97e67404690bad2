//! Dense-tensor primitives with hand-derived backward passes.
//!
//! Everything downstream (backbone, descriptor, inversion objective) chains
//! gradients built from the ops in this module, and everything here is
//! checkable against the central-difference oracle in [`gradcheck`].

mod conv;
mod gradcheck;
mod pool;

pub use conv::{conv2d_backward, conv2d_backward_from_preact, conv2d_forward, conv2d_forward_cached, Activation, ConvLayerSpec};
pub use gradcheck::gradcheck;
pub use pool::{maxpool2_backward, maxpool2_forward, PoolRecord};
