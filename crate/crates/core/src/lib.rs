//! Function projection for flow matching on low-dimensional point clouds.

pub mod adam;
pub mod baselines;
pub mod basis;
pub mod datasets;
pub mod dynamic;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
