//! Adversarial random forests for density estimation and missing-value
//! imputation.

pub mod arf;
pub mod density;
pub mod error;
pub mod forest;
pub mod impute;
pub mod model;
mod serde_ext;
pub mod simbench;
pub mod rng;
pub mod stats;
pub mod tabular;

pub use error::{Error, Result};
