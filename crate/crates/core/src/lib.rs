//! Image inpainting with distilled semantic priors.

pub mod archive;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluator;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod setup;
pub mod teacher;
pub mod trainer;
pub mod viz;

pub use error::{Result, SplError};
