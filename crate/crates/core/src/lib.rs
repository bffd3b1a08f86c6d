//! Prior-aware evidential regression with split-conformal calibration on graphs.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active;
pub mod bounds;
pub mod cli;
pub mod conformal;
pub mod data;
pub mod error;
pub mod experiments;
pub mod head;
pub mod metrics;
pub mod numerics;
pub mod objective;
pub mod report;
pub mod trainer;

pub use error::{Error, Result};
