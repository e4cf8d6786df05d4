//! Feature-interaction graph neural network (Fi-GNN) for click-through-rate
//! prediction, with the data pipeline, training loop, metrics, baselines and
//! explanation export around it.

pub mod error;
pub mod baselines;
pub mod checkpoint;
pub mod encoder;
pub mod explain;
pub mod featurestore;
pub mod graphcore;
pub mod metrics;
pub mod model;
pub mod numerics;
mod parallel;
pub mod scoring;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
