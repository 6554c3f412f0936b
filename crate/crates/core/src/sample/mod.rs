//! Labeled calibration samples.
//!
//! Extrinsics map LiDAR points into the camera optical frame (the KITTI
//! `Tr_velo_to_cam` convention). Decalibrations and cascade residuals are
//! parameterized by Euler angles about the camera *body* axes (x forward,
//! y left, z up), so "yaw" is a rotation about the vertical, and are
//! left-composed onto the extrinsic: `t_init = t_decal * t_true`.

mod depth_png;
mod kitti;
mod manifest;
mod scene;

pub use depth_png::{read_depth_png, write_depth_png};
pub use kitti::{parse_kitti_calib, read_velodyne_bin, write_kitti_calib, write_velodyne_bin};
pub use manifest::{load_scene_data, write_scene_files, Manifest, ManifestEntry, Split};
pub use scene::{generate_scene, two_plateau_depth, Aabb, CameraMount, Scene, SceneConfig, Surface};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::CalibParams;
use crate::pseudo_lidar::{back_project, detect_depth_edges, filter_edges, CameraIntrinsics, CannyConfig, DepthMap};
use crate::se3::{body_motion_in_optical, EulerAngles, PointCloud, RigidTransform};

/// Per-axis bounds: rotation in degrees, translation in centimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecalibrationRange {
    pub roll_max: f64,
    pub pitch_max: f64,
    pub yaw_max: f64,
    pub trans_max: f64,
}

impl DecalibrationRange {
    /// Coarse-stage training range.
    pub const PSEUDO_PILLARS: Self = Self::new(30.0, 30.0, 180.0, 150.0);
    /// Medium refinement range.
    pub const UNICAL_M: Self = Self::new(10.0, 10.0, 10.0, 100.0);
    /// Small refinement range.
    pub const UNICAL_S: Self = Self::new(1.0, 1.0, 1.0, 10.0);
    /// Intermediate range used only by the ablation rows.
    pub const UNICAL_ALPHA: Self = Self::new(3.0, 3.0, 3.0, 25.0);
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(roll_max: f64, pitch_max: f64, yaw_max: f64, trans_max: f64) -> Self {
        Self {
            roll_max,
            pitch_max,
            yaw_max,
            trans_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.roll_max, self.pitch_max, self.yaw_max, self.trans_max];
        if v.iter().any(|b| !b.is_finite() || *b < 0.0) || self.yaw_max > 180.0 {
            return Err(Error::Config(format!("invalid decalibration range {self:?}")));
        }
        Ok(())
    }

    /// Rotation bounds in radians.
    pub fn rotation_bounds(&self) -> [f64; 3] {
        [
            self.roll_max.to_radians(),
            self.pitch_max.to_radians(),
            self.yaw_max.to_radians(),
        ]
    }

    /// Translation bound in meters.
    pub fn trans_bound(&self) -> f64 {
        self.trans_max / 100.0
    }

    /// True if every axis of `other` is at most this range's bound.
    pub fn contains(&self, other: &DecalibrationRange) -> bool {
        other.roll_max <= self.roll_max
            && other.pitch_max <= self.pitch_max
            && other.yaw_max <= self.yaw_max
            && other.trans_max <= self.trans_max
    }
}

fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Draws body-axis decalibration parameters uniformly within the range.
pub fn sample_decalibration_params(r: &DecalibrationRange, rng: &mut impl Rng) -> CalibParams {
    let [rb, pb, yb] = r.rotation_bounds();
    let roll = uniform(rng, rb);
    let pitch = uniform(rng, pb);
    let yaw = uniform(rng, yb);
    let tb = r.trans_bound();
    let t = Vector3::new(uniform(rng, tb), uniform(rng, tb), uniform(rng, tb));
    CalibParams::new(EulerAngles::new(roll, pitch, yaw), t)
}

/// Converts body-axis parameters into the optical-frame transform that is
/// left-composed onto an extrinsic.
pub fn params_to_optical_transform(p: &CalibParams) -> Result<RigidTransform> {
    Ok(body_motion_in_optical(&p.to_transform()?))
}

/// Draws a decalibration transform (optical frame) within the range.
pub fn sample_decalibration(r: &DecalibrationRange, rng: &mut impl Rng) -> RigidTransform {
    let p = sample_decalibration_params(r, rng);
    params_to_optical_transform(&p).expect("sampled angles are finite")
}

/// Ranges for augmentation transforms applied to both sensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationRange {
    /// Degrees.
    pub roll_max: f64,
    pub pitch_max: f64,
    pub yaw_max: f64,
    /// Meters.
    pub trans_max: f64,
}

impl Default for AugmentationRange {
    fn default() -> Self {
        Self {
            roll_max: 10.0,
            pitch_max: 10.0,
            yaw_max: 180.0,
            trans_max: 2.0,
        }
    }
}

/// Draws a grid-frame augmentation transform.
pub fn sample_augmentation(r: &AugmentationRange, rng: &mut impl Rng) -> RigidTransform {
    let e = EulerAngles::from_degrees(
        uniform(rng, r.roll_max),
        uniform(rng, r.pitch_max),
        uniform(rng, r.yaw_max),
    );
    let t = Vector3::new(
        uniform(rng, r.trans_max),
        uniform(rng, r.trans_max),
        uniform(rng, r.trans_max),
    );
    RigidTransform::from_euler(e, t).expect("sampled angles are finite")
}

/// Sensor data needed to build samples: a LiDAR scan, a camera depth map and
/// the calibration between them.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub lidar_cloud: PointCloud,
    pub depth: DepthMap,
    pub intrinsics: CameraIntrinsics,
    /// LiDAR to camera optical frame.
    pub t_true: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibSample {
    /// LiDAR frame.
    pub lidar_cloud: PointCloud,
    /// Camera optical frame.
    pub pseudo_cloud: PointCloud,
    pub t_true: RigidTransform,
    pub t_decal: RigidTransform,
    /// `t_decal * t_true`.
    pub t_init: RigidTransform,
    /// Body-axis parameters that generated `t_decal`.
    pub decal_params: CalibParams,
}

/// Back-projects the depth map, optionally removing Canny depth edges first.
pub fn pseudo_cloud(depth: &DepthMap, k: &CameraIntrinsics, canny: Option<&CannyConfig>) -> Result<PointCloud> {
    match canny {
        Some(cfg) => {
            cfg.validate()?;
            let mask = detect_depth_edges(depth, cfg);
            back_project(&filter_edges(depth, &mask)?, k)
        }
        None => back_project(depth, k),
    }
}

/// Builds a sample with a seeded decalibration drawn from `r`.
pub fn make_sample(
    scene: &SceneData,
    t_true: &RigidTransform,
    r: &DecalibrationRange,
    seed: u64,
    canny: Option<&CannyConfig>,
) -> Result<CalibSample> {
    r.validate()?;
    let pseudo = pseudo_cloud(&scene.depth, &scene.intrinsics, canny)?;
    if pseudo.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decal_params = sample_decalibration_params(r, &mut rng);
    sample_with_decalibration(scene.lidar_cloud.clone(), pseudo, *t_true, decal_params)
}

/// Decalibration for the `index`-th sample of a seeded dataset. Each index
/// draws from its own ChaCha stream, so a sample's parameters do not depend
/// on how many samples precede it.
pub fn indexed_decalibration(r: &DecalibrationRange, seed: u64, index: u64) -> CalibParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    sample_decalibration_params(r, &mut rng)
}

/// Builds a sample from explicit clouds and decalibration parameters.
pub fn sample_with_decalibration(
    lidar_cloud: PointCloud,
    pseudo_cloud: PointCloud,
    t_true: RigidTransform,
    decal_params: CalibParams,
) -> Result<CalibSample> {
    if pseudo_cloud.is_empty() {
        return Err(Error::EmptySample);
    }
    let t_decal = params_to_optical_transform(&decal_params)?;
    Ok(CalibSample {
        lidar_cloud,
        pseudo_cloud,
        t_true,
        t_init: t_decal.compose(&t_true),
        t_decal,
        decal_params,
    })
}

/// Applies the same grid-frame transform to both clouds. Labels are untouched.
pub fn apply_augmentation(s: &CalibSample, t_aug: &RigidTransform) -> CalibSample {
    CalibSample {
        lidar_cloud: t_aug.apply(&s.lidar_cloud),
        pseudo_cloud: body_motion_in_optical(t_aug).apply(&s.pseudo_cloud),
        ..s.clone()
    }
}
