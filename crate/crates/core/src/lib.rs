//! Next-frame video prediction with a multi-scale convolutional generator,
//! adversarial training and a gradient difference loss.
//!
//! Modules follow the pipeline: [`compute`] holds the differentiable array
//! core, [`model`] the generator and discriminator, [`losses`] the training
//! objectives, [`training`] the alternating SGD loop and checkpoints,
//! [`data`] clip I/O and synthetic video, and [`eval`] the image quality
//! metrics.

pub mod compute;
pub mod data;
pub mod error;
pub mod eval;
pub mod kv;
pub mod losses;
pub mod model;
pub mod training;

pub use error::{Error, Result};
