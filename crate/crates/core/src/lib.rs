//! Group-relative advantages, difficulty-adaptive rollout allocation and
//! clipped policy updates on a synthetic verifiable-reward task suite.

pub mod advantage;
pub mod checkpoint;
pub mod dars;
pub mod env;
pub mod error;
pub mod eval;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
