//! Rigid-transform algebra.
//!
//! Conventions used across the crate:
//!
//! * points are column vectors and a transform maps `p' = R p + t`;
//! * Euler angles are intrinsic Z-Y-X: `R = Rz(yaw) * Ry(pitch) * Rx(roll)`;
//! * angles are radians internally, degrees only at I/O and metric boundaries;
//! * `a.compose(&b)` applies `b` first, then `a`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

const ORTHONORMAL_TOL: f64 = 1e-9;
const GIMBAL_TOL: f64 = 1e-7;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let r = a.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EulerAngles {
    /// Radians about X.
    pub roll: f64,
    /// Radians about Y.
    pub pitch: f64,
    /// Radians about Z.
    pub yaw: f64,
}

impl EulerAngles {
    pub const fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_degrees(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians())
    }

    pub fn to_degrees(self) -> [f64; 3] {
        [self.roll.to_degrees(), self.pitch.to_degrees(), self.yaw.to_degrees()]
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    pub fn is_finite(&self) -> bool {
        self.roll.is_finite() && self.pitch.is_finite() && self.yaw.is_finite()
    }

    /// Equivalent triple with roll, yaw in `(-pi, pi]` and pitch in `[-pi/2, pi/2]`.
    pub fn canonical(self) -> Result<Self> {
        Ok(matrix_to_euler(&euler_to_matrix(self)?).angles)
    }

    pub fn to_matrix(self) -> Result<RotationMatrix> {
        euler_to_matrix(self)
    }
}

/// Orthonormal 3x3 matrix with unit determinant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates orthonormality and determinant to within 1e-9.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let dev = orthonormality_error(&m);
        if !dev.is_finite() || dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidRotation(format!("|R^T R - I|_inf = {dev:e}")));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidRotation(format!("det = {det}")));
        }
        Ok(Self(m))
    }

    /// Projects an arbitrary matrix onto SO(3) (closest in Frobenius norm).
    pub fn nearest(m: &Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entries".into()));
        }
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::InvalidRotation("SVD failed".into())),
        };
        let mut d = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Ok(Self(u * d * v_t))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rot_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn to_euler(&self) -> EulerDecomposition {
        matrix_to_euler(self)
    }

    /// Rotation angle of `self^T * other`, in degrees.
    pub fn geodesic_angle_deg(&self, other: &RotationMatrix) -> f64 {
        geodesic_angle(self, other)
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).amax()
}

/// Result of decomposing a rotation matrix into Euler angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerAngles,
    /// Set when pitch sits within 1e-7 of +-pi/2; roll is then fixed to 0.
    pub gimbal_lock: bool,
}

pub fn euler_to_matrix(e: EulerAngles) -> Result<RotationMatrix> {
    if !e.is_finite() {
        return Err(Error::InvalidAngle(format!("{e:?}")));
    }
    Ok(RotationMatrix::rot_z(e.yaw) * RotationMatrix::rot_y(e.pitch) * RotationMatrix::rot_x(e.roll))
}

pub fn matrix_to_euler(r: &RotationMatrix) -> EulerDecomposition {
    let m = r.matrix();
    let cos_pitch = m[(0, 0)].hypot(m[(1, 0)]);
    let pitch = (-m[(2, 0)]).atan2(cos_pitch);
    if FRAC_PI_2 - pitch.abs() < GIMBAL_TOL {
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return EulerDecomposition {
            angles: EulerAngles::new(0.0, pitch, wrap_angle(yaw)),
            gimbal_lock: true,
        };
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    EulerDecomposition {
        angles: EulerAngles::new(wrap_angle(roll), pitch, wrap_angle(yaw)),
        gimbal_lock: false,
    }
}

/// Angle between two rotations in degrees.
pub fn geodesic_angle(a: &RotationMatrix, b: &RotationMatrix) -> f64 {
    let trace = (a.matrix().transpose() * b.matrix()).trace();
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

/// A rigid transform `p' = R p + t`, translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Input(format!("non-finite translation {translation:?}")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_euler(e: EulerAngles, translation: Vector3<f64>) -> Result<Self> {
        Self::new(euler_to_matrix(e)?, translation)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(r: RotationMatrix) -> Self {
        Self {
            rotation: r,
            translation: Vector3::zeros(),
        }
    }

    /// Result applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.matrix() * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            translation: -(rt.matrix() * self.translation),
            rotation: rt,
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation.matrix() * p.coords + self.translation)
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.transform_point(p)).collect(),
            intensity: cloud.intensity.clone(),
        }
    }

    pub fn euler(&self) -> EulerAngles {
        self.rotation.to_euler().angles
    }

    /// Largest element-wise difference of rotation and translation parts.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation.matrix() - other.rotation.matrix()).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn inverse(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

pub fn apply(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    t.apply(cloud)
}

/// Fixed rotation from the camera optical frame (x right, y down, z forward)
/// to the camera body frame (x forward, y left, z up).
pub fn optical_to_body() -> RigidTransform {
    RigidTransform::from_rotation(RotationMatrix::from_matrix_unchecked(Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    )))
}

pub fn body_to_optical() -> RigidTransform {
    optical_to_body().inverse()
}

/// Re-expresses a body-frame transform as the same motion in the optical frame.
pub fn body_motion_in_optical(body: &RigidTransform) -> RigidTransform {
    body_to_optical().compose(body).compose(&optical_to_body())
}

/// Inverse of [`body_motion_in_optical`].
pub fn optical_motion_in_body(optical: &RigidTransform) -> RigidTransform {
    optical_to_body().compose(optical).compose(&body_to_optical())
}

/// Ordered 3D points in meters with optional per-point intensity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>, intensity: Option<Vec<f32>>) -> Result<Self> {
        if let Some(i) = &intensity {
            if i.len() != points.len() {
                return Err(Error::Dimension(format!(
                    "{} points but {} intensities",
                    points.len(),
                    i.len()
                )));
            }
        }
        if let Some(bad) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::Input(format!("point {bad} is not finite")));
        }
        Ok(Self { points, intensity })
    }

    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
        Some(Point3::from(sum / self.points.len() as f64))
    }

    /// Keeps every k-th point so that at most `max_points` remain.
    pub fn subsample(&self, max_points: usize) -> PointCloud {
        if self.points.len() <= max_points || max_points == 0 {
            return self.clone();
        }
        let k = self.points.len().div_ceil(max_points);
        PointCloud {
            points: self.points.iter().step_by(k).copied().collect(),
            intensity: self.intensity.as_ref().map(|i| i.iter().step_by(k).copied().collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_angles_give_identity_matrix() {
        let r = euler_to_matrix(EulerAngles::default()).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_euler(EulerAngles::new(0.0, 0.0, FRAC_PI_2), Vector3::zeros()).unwrap();
        let p = t.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn non_finite_angle_rejected() {
        let err = euler_to_matrix(EulerAngles::new(f64::NAN, 0.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidAngle(_)));
    }

    #[test]
    fn small_triple_round_trips() {
        let e = EulerAngles::new(0.1, -0.2, 0.3);
        let m = euler_to_matrix(e).unwrap();
        // direct trigonometric evaluation of Rz*Ry*Rx
        let (sr, cr) = 0.1f64.sin_cos();
        let (sp, cp) = (-0.2f64).sin_cos();
        let (sy, cy) = 0.3f64.sin_cos();
        let expected = Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        );
        assert!((m.matrix() - expected).amax() < 1e-15);
        let back = matrix_to_euler(&m);
        assert!(!back.gimbal_lock);
        assert_abs_diff_eq!(back.angles.roll, 0.1, epsilon = 1e-10);
        assert_abs_diff_eq!(back.angles.pitch, -0.2, epsilon = 1e-10);
        assert_abs_diff_eq!(back.angles.yaw, 0.3, epsilon = 1e-10);
    }

    #[test]
    fn rz_decomposes_to_pure_yaw() {
        let d = matrix_to_euler(&RotationMatrix::rot_z(FRAC_PI_2));
        assert_abs_diff_eq!(d.angles.roll, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.angles.pitch, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.angles.yaw, FRAC_PI_2, epsilon = 1e-15);
        assert_eq!(
            matrix_to_euler(&RotationMatrix::identity()).angles,
            EulerAngles::default()
        );
    }

    #[test]
    fn gimbal_lock_is_flagged_and_reconstructs() {
        for pitch in [FRAC_PI_2, -FRAC_PI_2] {
            let e = EulerAngles::new(0.4, pitch, -1.1);
            let r = euler_to_matrix(e).unwrap();
            let d = matrix_to_euler(&r);
            assert!(d.gimbal_lock);
            assert_eq!(d.angles.roll, 0.0);
            let back = euler_to_matrix(d.angles).unwrap();
            assert!((back.matrix() - r.matrix()).amax() < 1e-9);
        }
    }

    #[test]
    fn inverse_of_pure_translation() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.inverse().translation, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = RigidTransform::from_euler(EulerAngles::new(0.3, -0.7, 2.0), Vector3::new(0.5, -1.0, 4.0)).unwrap();
        assert_eq!(t.compose(&RigidTransform::identity()), t);
        assert!(t.inverse().compose(&t).max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn apply_preserves_order_and_intensity() {
        let cloud = PointCloud::new(
            vec![Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 2.0, 0.0)],
            Some(vec![0.25, 0.75]),
        )
        .unwrap();
        assert_eq!(RigidTransform::identity().apply(&cloud), cloud);
        let yaw = RigidTransform::from_rotation(RotationMatrix::rot_z(FRAC_PI_2));
        let out = yaw.apply(&cloud);
        assert_abs_diff_eq!(out.points[0], Point3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        assert_eq!(out.intensity, cloud.intensity);

        let shift = RigidTransform::from_translation(Vector3::new(0.0, 0.0, 5.0));
        let c0 = cloud.centroid().unwrap();
        let c1 = shift.apply(&cloud).centroid().unwrap();
        assert_abs_diff_eq!(c1, c0 + Vector3::new(0.0, 0.0, 5.0), epsilon = 1e-15);
    }

    #[test]
    fn geodesic_angles() {
        let r = RotationMatrix::rot_x(0.3) * RotationMatrix::rot_z(1.0);
        assert_abs_diff_eq!(geodesic_angle(&r, &r), 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(
            geodesic_angle(&RotationMatrix::identity(), &RotationMatrix::rot_z(FRAC_PI_2)),
            90.0,
            epsilon = 1e-12
        );
        let ten = euler_to_matrix(EulerAngles::from_degrees(10.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(geodesic_angle(&RotationMatrix::identity(), &ten), 10.0, epsilon = 1e-9);
    }

    #[test]
    fn rotation_constructor_rejects_non_orthonormal() {
        assert!(RotationMatrix::new(Matrix3::identity() * 1.001).is_err());
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(RotationMatrix::new(reflection).is_err());
        let near = RotationMatrix::nearest(&(Matrix3::identity() * 1.001)).unwrap();
        assert!((near.matrix() - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn optical_body_axes() {
        let forward_opt = Point3::new(0.0, 0.0, 1.0);
        let right_opt = Point3::new(1.0, 0.0, 0.0);
        let down_opt = Point3::new(0.0, 1.0, 0.0);
        let o2b = optical_to_body();
        assert_eq!(o2b.transform_point(&forward_opt), Point3::new(1.0, 0.0, 0.0));
        assert_eq!(o2b.transform_point(&right_opt), Point3::new(0.0, -1.0, 0.0));
        assert_eq!(o2b.transform_point(&down_opt), Point3::new(0.0, 0.0, -1.0));
        assert!(RotationMatrix::new(*o2b.rotation.matrix()).is_ok());
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_angle(PI), PI);
        assert_abs_diff_eq!(wrap_angle(-PI), PI, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI / 2.0), -FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_degrees(358.0), -2.0, epsilon = 1e-12);
    }

    #[test]
    fn subsample_every_kth() {
        let pts: Vec<_> = (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let c = PointCloud::from_points(pts);
        let s = c.subsample(4);
        assert_eq!(s.len(), 4);
        assert_eq!(s.points[1].x, 3.0);
        assert_eq!(c.subsample(100), c);
    }
}
