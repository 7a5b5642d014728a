//! Neural predictive cruise control for heavy trucks: data grid, samplers,
//! the NVFormer speed/torque predictor, the sampling optimizer and a
//! longitudinal simulator for closed-loop evaluation.

// Validation uses `!(x > 0.0)` so NaN is rejected alongside non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod eval;
pub mod future_sampler;
pub mod nvformer;
pub mod optimizer;
pub mod past_sampler;
pub mod sim;
pub mod tensor;

pub use error::{NpcError, Result};
pub use tensor::Matrix;
