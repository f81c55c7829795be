//! Laboratory for capability erosion under sequential adaptation.
//!
//! Three channels share one story: adapting a mutable capability state to a
//! new task distribution can raise the loss on tasks seen earlier, and a
//! deviation penalty against the previous state limits that damage.
//!
//! - [`geometry`]: exact quadratic analysis of naive and penalized updates.
//! - [`trainer`]: sequential multinomial logistic regression with a diagonal
//!   Fisher penalty.
//! - [`repository`]: a bounded skill/memory bank with LFU eviction versus
//!   merge, protection and evidence gating.

// Dense kernels index several arrays at once, and `!(x > y)` rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
mod mode;
pub mod geometry;
pub mod numerics;
pub mod repository;
pub mod trainer;

pub use error::{Error, Result};
pub use mode::Mode;
pub use numerics::{Rng, SymMatrix, Vector};
