//! Numeric substrate: dense matrices, smooth activations, Adam, feature
//! standardization, seeded random streams and a few summary statistics.

mod activation;
mod adam;
mod matrix;
mod rng;
mod standardize;
pub mod stats;

pub use activation::{logit, sigmoid, Activation};
pub use adam::AdamState;
pub use matrix::{axpy, dot, sq_dist, Matrix};
pub use rng::RngStream;
pub use standardize::{standardize_fit_apply, Standardizer};
