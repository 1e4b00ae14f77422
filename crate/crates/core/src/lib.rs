//! Gradient tree boosting with extreme-value losses for zero-inflated, heavy-tailed
//! spatio-temporal responses, together with spatially correlated fold generation,
//! Bayesian-optimization tuning and model interpretation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod losses;
pub mod matrix;
pub mod special;
pub mod dist;
pub mod tree;
pub mod booster;
pub mod dataset;
pub mod mixture;
pub mod spatialcv;
pub mod evaluate;
pub mod interpret;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use matrix::Matrix;
