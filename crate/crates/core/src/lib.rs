//! Noise-resilient training of energy/force regressors.
//!
//! Per-sample losses are tracked with an exponential moving average; samples
//! whose loss sits far above the running mean get a weight below one, and the
//! batch loss uses the squared weights.

pub mod config;
pub mod dataset;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod loss;
pub mod models;
pub mod optim;
pub mod refine;
pub mod rng;
pub mod sample;
pub mod stats;
pub mod telemetry;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/weights.md")]
    mod weights {}
    #[doc = include_str!("../../../book/src/statistics.md")]
    mod statistics {}
    #[doc = include_str!("../../../book/src/loss.md")]
    mod loss {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/refinement.md")]
    mod refinement {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
