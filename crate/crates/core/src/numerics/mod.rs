//! Scalar special functions, smooth operators, quantile routines, rank
//! statistics, deterministic random streams and the finite-difference
//! gradient check used as the oracle for every analytic gradient.

mod gradcheck;
mod quantile;
mod rng;
mod special;
mod stats;

pub use gradcheck::{finite_difference_gradient, relative_error};
pub use quantile::{conformal_quantile, conformal_rank, soft_quantile, soft_quantile_weights};
pub use rng::RngStream;
pub use special::{
    digamma, lgamma, log_sigmoid, normal_quantile, sigmoid, softplus, softplus_inverse,
};
pub(crate) use special::{digamma_unchecked, ln_gamma};
pub use stats::{mean, median, midranks, pearson, percentile, spearman};
