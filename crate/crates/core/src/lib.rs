//! Synthetic football-pitch datasets, a convolutional keypoint regressor
//! trained on them, and ground-plane homography fitting from the recovered
//! pitch keypoints.

pub mod augment;
pub mod camera;
pub mod dataset;
pub mod eval;
pub mod error;
pub mod geom;
pub mod nn;
pub mod pitch;
pub mod raster;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
