//! Novelty detection in the feature space of CNN sensors.
//!
//! A trained convolutional sensor maps images to process states. Its
//! intermediate feature maps are scalarized per filter, refined, and handed to
//! a one-class SVM whose score flags images the sensor was never trained for.
//! The crate also ships the simulated pendulum and cart-pole processes, the
//! disturbance synthesizer, a PID loop with a safety latch, and the binary
//! artifact formats used by the command-line tool.

pub mod augment;
pub mod cnn;
pub mod control;
pub mod dataset;
pub mod detector;
pub mod envs;
pub mod error;
pub mod io;
pub mod numeric;
pub mod occ;
pub mod reduction;

pub use error::{Error, Result};
