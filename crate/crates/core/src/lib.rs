//! Sparse mixture-of-experts decoder with random routed experts.
//!
//! Tokens are routed first by domain to that domain's expert group, then to
//! one expert through a fixed, balanced random table keyed by token ID. No
//! learnable router exists, which makes per-domain sub-model extraction
//! exact and confines all-to-all traffic to each domain's device group.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod inherit;
pub mod model;
pub mod rng;
pub mod routing;
pub mod sim;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
