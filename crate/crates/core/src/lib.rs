pub mod att;
pub mod baselines;
pub mod cate;
pub mod cli;
pub mod datasets;
pub mod error;
pub mod gan;
pub mod kv;
pub mod metrics;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
