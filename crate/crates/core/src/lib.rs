//! Reference-guided click-based interactive segmentation.

pub mod clicks;
pub mod data;
pub mod degrade;
pub mod error;
pub mod maskops;
pub mod model;
pub mod prompt;
pub mod robot;
pub mod sampling;
pub mod training;

pub use error::{Error, Result};

pub use candle_core::DType;
