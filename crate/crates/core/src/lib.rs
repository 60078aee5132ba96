pub mod baselines;
pub mod belief;
pub mod cosyne;
pub mod divergence;
pub mod env;
pub mod harness;
pub mod error;
pub mod experiment;
pub mod model;
pub mod net;
pub mod prune;
pub mod rollout;
pub mod seed;

pub use error::{Error, Result};
