pub mod backbone;
pub mod cache_theory;
pub mod cli;
pub mod error;
pub mod eviction;
pub mod harness;
pub mod numerics;
pub mod retaining;

pub use error::{Error, Result};
