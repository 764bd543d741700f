//! Single-frame object detection in 2D laser range data.
//!
//! The pipeline: depth-normalized window extraction around every beam
//! ([`preprocess`]), a small 1-D convolutional classifier/regressor trained
//! from scratch ([`nn`]), and class-weighted center voting with non-maximum
//! suppression ([`vote`]). [`eval`] implements the precision/recall protocol,
//! [`tune`] the random search over voting hyperparameters, [`dataio`] the file
//! formats and the synthetic ray-cast scene generator, and [`pipeline`] ties a
//! trained model, its configuration, and checkpointing together.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod train;
pub mod tune;
pub mod vote;

pub use error::Error;
