pub mod baselines;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod map;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod render;
pub mod train;

pub use error::{Error, Result};
