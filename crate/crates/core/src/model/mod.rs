//! Model-based proposers: Gaussian-process expected improvement and the
//! tree-structured Parzen estimator.
//!
//! Model math runs on a normalized encoding of the search space: numeric
//! dimensions are mapped affinely onto `[0, 1]` and choice dimensions are
//! one-hot encoded.

mod encode;
pub mod gp;
pub mod tpe;

pub use encode::{halton, Encoder};
pub use gp::{expected_improvement, GpEiProposer, GpError, GpSurrogate, KernelParams};
pub use tpe::{split_sizes, TpeModel, TpeProposer};
