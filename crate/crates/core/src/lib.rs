//! Token-level persona-contrast scoring and weighted cross-entropy training.

pub mod error;
pub mod eval;
pub mod data;
pub mod losses;
pub mod model;
pub mod numcore;
pub mod scoring;
pub mod trainer;

pub use error::{Error, Result};
