//! Grid-based optimal filtering for hidden Markov chains, with tools to check
//! stability of the filter under model perturbations and its forgetting of the
//! initial condition.

pub mod assumptions;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod measure;
pub mod model;
pub mod stats;

pub use error::{Error, Result};
