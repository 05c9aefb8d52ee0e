//! Deterministic sky-surveillance pipeline for wind-turbine bird protection.
//!
//! Synthetic scenarios are rendered into camera frames and pushed through
//! motion detection, tiled detection, Kalman tracking, Bayesian species
//! fusion, stereo ranging and a turbine shutdown manager.

pub mod detect;
pub mod fuse;
pub mod geometry;
pub mod image;
pub mod manager;
pub mod motion;
pub mod rng;
pub mod runner;
pub mod species;
pub mod synthsky;
pub mod tiling;
pub mod track;

pub use geometry::{BBox, CalibCurve, CameraModel, StereoRig, Vec3};
pub use image::ImageFrame;
pub use species::Species;
