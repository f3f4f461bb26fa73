//! Bayesian synthesis of biased and unbiased prevalence surveys.

pub mod analysis;
pub mod datagen;
pub mod dists;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod mcmc;
pub mod model;
pub mod seed;
pub mod simstudy;

pub use error::{Error, Result};
