//! Pointer-generator sentence summarizers with optional POS and dependency
//! encoders, trained by cross-entropy and self-critical policy gradient,
//! plus the ROUGE and output-quality measurements used to compare them.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod quality;
pub mod rouge;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
