pub mod analysis;
pub mod config;
pub mod data;
pub mod error;
pub mod forecast;
pub mod model;
pub mod numerics;
pub mod sir;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
