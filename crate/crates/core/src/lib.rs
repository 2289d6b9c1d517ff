//! Detection of global pairwise feature interactions with uncertainty.
//!
//! A hybrid regression model (linear main effects plus a concrete-dropout
//! Bayesian MLP) is trained on tabular data; input Hessians of the MLP are
//! then aggregated over a k-means partition of the data into group expected
//! Hessians, and their posterior mean and spread are estimated by sampling
//! dropout masks.

pub mod bnn;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod hessian;
pub mod interactions;
pub mod math;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn digest_json<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let bytes = serde_json::to_vec(value).expect("serializable config");
    let hash = Sha256::digest(&bytes);
    hash.iter().map(|b| format!("{b:02x}")).collect()
}
