//! Confidence-weighted renewable forecasting feeding a patched actor-critic
//! dispatcher on a synthetic AC grid.

pub mod confidence;
pub mod data;
pub mod ddpg;
pub mod dispatcher;
mod error;
pub mod forecast;
pub mod grid;

pub use error::{Error, Result};
