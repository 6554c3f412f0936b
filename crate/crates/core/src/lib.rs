//! Targetless camera–LiDAR extrinsic calibration from monocular depth.
//!
//! Depth images are lifted to pseudo-LiDAR clouds, both sensors are encoded
//! as bird's-eye-view pillar images, and a cascade of estimators narrows the
//! decalibration from a coarse global search down to fine regression.

pub mod cascade;
pub mod error;
pub mod eval;
pub mod loss;
pub mod pillar;
pub mod pseudo_lidar;
pub mod sample;
pub mod se3;

pub use error::{Error, Result};
pub use nalgebra::{Matrix3, Point3, Vector3};
