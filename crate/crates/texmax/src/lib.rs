//! Texture-based category visualization and description.
//!
//! The pipeline: a fixed convolutional backbone with tap layers feeds
//! second-order texture descriptors (outer-product pooling, signed square
//! root, l2 normalization); per-tap softmax heads classify descriptors;
//! maximal images for a class are synthesized by minimizing the summed
//! per-tap softmax loss plus a total-variation prior over the pixels; and
//! one-vs-rest phrase scorers describe the result as a phrase cloud.

pub mod backbone;
pub mod cloud;
pub mod data;
pub mod descriptor;
pub mod diagnostics;
pub mod error;
pub mod heads;
pub mod inversion;
pub mod numerics;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor3;

/// Caps rayon parallelism from the `TEXMAX_THREADS` env var; call once at
/// process start. Silently keeps the default (machine cores) when unset.
pub fn init_thread_pool_from_env() {
    if let Ok(v) = std::env::var("TEXMAX_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
