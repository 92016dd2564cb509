//! Key-based access control for object detectors.
//!
//! A secret key selects channel permutations applied to chosen feature maps
//! of a small multi-scale single-shot detector, during training and at
//! inference. Without the key (or with a different one) the permuted
//! activations no longer line up with the weights that consume them and
//! detection quality collapses. The crate also provides block-wise pixel
//! shuffling of input images as a comparison scheme, VOC-style mAP scoring,
//! and the unauthorized-access protocols used to measure protection.

pub mod attacks;
pub mod boxes;
pub mod config;
pub mod data;
pub mod detector;
mod error;
pub mod evaluation;
pub mod exec;
pub mod keyed_transforms;
pub mod report;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
