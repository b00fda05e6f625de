//! SOCKET: soft-collision LSH scoring for sparse attention.
//!
//! Traditional sign-random-projection LSH scores a key by counting the hash
//! tables in which it collides with the query. Those counts are coarse integer
//! signals and rank keys poorly. This crate implements the soft variant: the
//! query is hashed into a temperature-controlled probability distribution over
//! buckets per table, and each key is scored by the probability mass its
//! bucket receives, summed across tables. The continuous scores preserve the
//! relative ordering of important keys and drive value-aware top-k selection
//! for sparse attention.
//!
//! Alongside the scorer the crate ships the exact references the theory is
//! measured against (dense attention, the angular-kernel attention target, a
//! Monte-Carlo population limit, an importance-sampling estimator), ranking
//! metrics, and a verification lab that empirically checks the error
//! decomposition and concentration rates of the estimators.
//!
//! Everything is deterministic given a master seed, at any worker count.

pub mod attention;
pub mod error;
pub mod kv;
pub mod linalg;
pub mod lsh;
pub mod metrics;
mod parallel;
pub mod rng;
pub mod soft;
pub mod theory;

pub use error::{Error, Result};
