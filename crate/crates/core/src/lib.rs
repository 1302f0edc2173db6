pub mod ablation;
pub mod augment;
pub mod autodiff;
pub mod codebook;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod patchify;
pub mod suite;
pub mod trainer;

pub use error::{Error, Result};
