//! Gaussian-process vector autoregressions with stochastic volatility.

pub mod dgp;
pub mod draws;
pub mod error;
pub mod forecast;
pub mod girf;
pub mod gp;
pub mod horseshoe;
pub mod kernels;
pub mod linalg;
pub mod panel;
pub mod sampler;
pub mod stats;
pub mod sv;

pub use error::{Error, Result};
