//! End-to-end pipeline for synthesizing wrist accelerometer signals from 3D
//! skeleton pose sequences.
//!
//! A temporal-convolutional regressor turns pose windows into synthetic
//! 3-axis accelerometer windows; a convolutional feature extractor and a
//! linear classifier consume real and synthetic sensor windows for activity
//! recognition. The whole stack — dense tensors with reverse-mode
//! differentiation, Adam, preprocessing, a kinematic test-data generator,
//! training regimes, metrics, and the on-disk formats — lives in this crate;
//! the companion CLI crate drives it.

pub mod error;
pub mod evaluation;
pub mod io;
pub mod models;
pub mod preprocessing;
pub mod rng;
pub mod synthdata;
pub mod tensor;
pub mod training;

pub use error::{Category, Error, Result};
pub use rng::StreamRng;
