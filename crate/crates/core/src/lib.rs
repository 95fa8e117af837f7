pub mod attention;
pub mod centroid;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod head;
pub mod model;
pub mod nncore;
pub mod plot;
pub mod trainer;

#[cfg(test)]
mod oracles;

pub use error::{Error, Result};
