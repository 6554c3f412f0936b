//! Composite calibration loss and its analytic gradient.
//!
//! `total = alpha * l_t + beta * l_r + gamma * l_pcl + delta * l_c` where
//!
//! * `l_t`: mean squared translation difference (m^2),
//! * `l_r`: mean squared wrapped Euler difference (rad^2),
//! * `l_pcl`: mean distance between the cloud moved by the predicted and by
//!   the ground-truth transform, with correspondence by index (m),
//! * `l_c`: distance between the two moved centroids (m).
//!
//! Callers pass whichever cloud the spatial terms should see; the cascade
//! uses the LiDAR cloud subsampled to at most [`SPATIAL_LOSS_MAX_POINTS`].

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{wrap_angle, EulerAngles, PointCloud, RigidTransform, RotationMatrix};

pub const SPATIAL_LOSS_MAX_POINTS: usize = 4096;

/// Six calibration parameters: Euler angles (rad) and translation (m).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CalibParams {
    pub euler: EulerAngles,
    pub translation: Vector3<f64>,
}

impl CalibParams {
    pub fn new(euler: EulerAngles, translation: Vector3<f64>) -> Self {
        Self { euler, translation }
    }

    /// `[roll, pitch, yaw, tx, ty, tz]`.
    pub fn as_array(&self) -> [f64; 6] {
        [
            self.euler.roll,
            self.euler.pitch,
            self.euler.yaw,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            euler: EulerAngles::new(a[0], a[1], a[2]),
            translation: Vector3::new(a[3], a[4], a[5]),
        }
    }

    pub fn to_transform(&self) -> Result<RigidTransform> {
        RigidTransform::from_euler(self.euler, self.translation)
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self {
            euler: t.euler(),
            translation: t.translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.3,
            beta: 1.3,
            gamma: 1.0,
            delta: 1.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_t: f64,
    pub l_r: f64,
    pub l_pcl: f64,
    pub l_c: f64,
    pub total: f64,
    /// d(total)/d[roll, pitch, yaw, tx, ty, tz] of the prediction.
    pub grad: [f64; 6],
}

pub fn translation_loss(pred: &CalibParams, gt: &CalibParams) -> f64 {
    (pred.translation - gt.translation).norm_squared() / 3.0
}

pub fn rotation_loss(pred: &CalibParams, gt: &CalibParams) -> f64 {
    angle_diffs(pred, gt).iter().map(|d| d * d).sum::<f64>() / 3.0
}

fn angle_diffs(pred: &CalibParams, gt: &CalibParams) -> [f64; 3] {
    let (p, g) = (pred.euler.as_array(), gt.euler.as_array());
    [
        wrap_angle(p[0] - g[0]),
        wrap_angle(p[1] - g[1]),
        wrap_angle(p[2] - g[2]),
    ]
}

pub fn pcl_loss(cloud: &PointCloud, pred: &CalibParams, gt: &CalibParams) -> Result<f64> {
    let (tp, tg) = transforms(pred, gt)?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let sum: f64 = cloud
        .points
        .iter()
        .map(|p| (tp.transform_point(p) - tg.transform_point(p)).norm())
        .sum();
    Ok(sum / cloud.len() as f64)
}

pub fn centroid_loss(cloud: &PointCloud, pred: &CalibParams, gt: &CalibParams) -> Result<f64> {
    let (tp, tg) = transforms(pred, gt)?;
    let c = cloud.centroid().ok_or(Error::EmptyCloud)?;
    Ok((tp.transform_point(&c) - tg.transform_point(&c)).norm())
}

fn transforms(pred: &CalibParams, gt: &CalibParams) -> Result<(RigidTransform, RigidTransform)> {
    Ok((pred.to_transform()?, gt.to_transform()?))
}

/// Partial derivatives of `Rz(yaw) Ry(pitch) Rx(roll)` w.r.t. roll, pitch, yaw.
pub fn rotation_partials(e: &EulerAngles) -> [Matrix3<f64>; 3] {
    let rx = *RotationMatrix::rot_x(e.roll).matrix();
    let ry = *RotationMatrix::rot_y(e.pitch).matrix();
    let rz = *RotationMatrix::rot_z(e.yaw).matrix();
    let (sr, cr) = e.roll.sin_cos();
    let (sp, cp) = e.pitch.sin_cos();
    let (sy, cy) = e.yaw.sin_cos();
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -sr, -cr, 0.0, cr, -sr);
    let dry = Matrix3::new(-sp, 0.0, cp, 0.0, 0.0, 0.0, -cp, 0.0, -sp);
    let drz = Matrix3::new(-sy, -cy, 0.0, cy, -sy, 0.0, 0.0, 0.0, 0.0);
    [rz * ry * drx, rz * dry * rx, drz * ry * rx]
}

/// Accumulates the distance and gradient of `|(Rp - Rg) q + dt|` at one point.
fn distance_grad(
    q: &Point3<f64>,
    dr: &Matrix3<f64>,
    dt: &Vector3<f64>,
    partials: &[Matrix3<f64>; 3],
    grad: &mut [f64; 6],
    scale: f64,
) -> f64 {
    let d = dr * q.coords + dt;
    let n = d.norm();
    if n > 0.0 {
        let u = d / n;
        for k in 0..3 {
            grad[k] += scale * u.dot(&(partials[k] * q.coords));
        }
        for k in 0..3 {
            grad[3 + k] += scale * u[k];
        }
    }
    n
}

pub fn total_loss(cloud: &PointCloud, pred: &CalibParams, gt: &CalibParams, w: &LossWeights) -> Result<LossBreakdown> {
    let (tp, tg) = transforms(pred, gt)?;
    let centroid = cloud.centroid().ok_or(Error::EmptyCloud)?;

    let dr = tp.rotation.matrix() - tg.rotation.matrix();
    let dt = tp.translation - tg.translation;
    let partials = rotation_partials(&pred.euler);

    let l_t = translation_loss(pred, gt);
    let diffs = angle_diffs(pred, gt);
    let l_r = diffs.iter().map(|d| d * d).sum::<f64>() / 3.0;

    let mut grad_pcl = [0.0; 6];
    let inv_n = 1.0 / cloud.len() as f64;
    let l_pcl = cloud
        .points
        .iter()
        .map(|p| distance_grad(p, &dr, &dt, &partials, &mut grad_pcl, inv_n))
        .sum::<f64>()
        * inv_n;

    let mut grad_c = [0.0; 6];
    let l_c = distance_grad(&centroid, &dr, &dt, &partials, &mut grad_c, 1.0);

    let mut grad = [0.0; 6];
    for k in 0..3 {
        grad[k] = w.beta * 2.0 / 3.0 * diffs[k];
        grad[3 + k] = w.alpha * 2.0 / 3.0 * dt[k];
    }
    for k in 0..6 {
        grad[k] += w.gamma * grad_pcl[k] + w.delta * grad_c[k];
    }

    Ok(LossBreakdown {
        l_t,
        l_r,
        l_pcl,
        l_c,
        total: w.alpha * l_t + w.beta * l_r + w.gamma * l_pcl + w.delta * l_c,
        grad,
    })
}
