//! KITTI-style calibration text and Velodyne binary scans.

use std::collections::HashMap;

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::pseudo_lidar::CameraIntrinsics;
use crate::se3::{PointCloud, RigidTransform, RotationMatrix};

const ORTHO_EXACT: f64 = 1e-9;
const ORTHO_REJECT: f64 = 1e-3;

fn key_values(text: &str) -> HashMap<&str, &str> {
    text.lines()
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim(), v.trim()))
        .collect()
}

fn numbers(map: &HashMap<&str, &str>, key: &str, n: usize) -> Option<Result<Vec<f64>>> {
    let raw = map.get(key)?;
    let parsed: std::result::Result<Vec<f64>, _> = raw.split_whitespace().map(str::parse).collect();
    Some(match parsed {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(Error::Parse { key: key.to_string() }),
    })
}

fn first_of(map: &HashMap<&str, &str>, keys: &[&str], n: usize) -> Option<Result<(String, Vec<f64>)>> {
    keys.iter()
        .find_map(|k| numbers(map, k, n).map(|r| r.map(|v| (k.to_string(), v))))
}

fn rotation_from(v: &[f64]) -> Result<RotationMatrix> {
    let m = Matrix3::from_row_slice(v);
    let dev = (m.transpose() * m - Matrix3::identity()).abs().max();
    if dev > ORTHO_REJECT || m.determinant() <= 0.0 {
        return Err(Error::Calib(format!(
            "rotation is not orthonormal (deviation {dev:.3e})"
        )));
    }
    if dev > ORTHO_EXACT {
        RotationMatrix::nearest(&m)
    } else {
        RotationMatrix::new(m)
    }
}

/// Parses the LiDAR-to-camera extrinsic and camera intrinsics.
///
/// The extrinsic comes from `R` + `T` or from a 3x4 `Tr_velo_to_cam`.
/// Intrinsics come from `K`/`K_02` (3x3) or `P2`/`P_rect_02` (3x4). The image
/// size is read from `S`/`S_02`/`S_rect_02` when present and otherwise set
/// so that the principal point sits at the image center.
pub fn parse_kitti_calib(text: &str) -> Result<(RigidTransform, CameraIntrinsics)> {
    let map = key_values(text);

    let t = if map.contains_key("R") || map.contains_key("T") {
        let r = numbers(&map, "R", 9).ok_or_else(|| Error::Parse { key: "R".into() })??;
        let t = numbers(&map, "T", 3).ok_or_else(|| Error::Parse { key: "T".into() })??;
        RigidTransform::new(rotation_from(&r)?, Vector3::new(t[0], t[1], t[2]))?
    } else {
        let (_, v) =
            first_of(&map, &["Tr_velo_to_cam", "Tr"], 12).ok_or_else(|| Error::Parse { key: "R".into() })??;
        let r = [v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]];
        RigidTransform::new(rotation_from(&r)?, Vector3::new(v[3], v[7], v[11]))?
    };

    let (f_u, f_v, c_u, c_v) = if let Some(k) = first_of(&map, &["K", "K_02"], 9) {
        let (_, k) = k?;
        (k[0], k[4], k[2], k[5])
    } else {
        let (_, p) = first_of(&map, &["P2", "P_rect_02"], 12).ok_or_else(|| Error::Parse { key: "K".into() })??;
        (p[0], p[5], p[2], p[6])
    };

    let (width, height) = match first_of(&map, &["S", "S_rect_02", "S_02"], 2) {
        Some(s) => {
            let (key, s) = s?;
            if s.iter().any(|x| *x < 1.0 || x.fract() != 0.0) {
                return Err(Error::Parse { key });
            }
            (s[0] as usize, s[1] as usize)
        }
        None => ((2.0 * c_u).floor() as usize + 1, (2.0 * c_v).floor() as usize + 1),
    };
    let k = CameraIntrinsics::new(f_u, f_v, c_u, c_v, width, height).map_err(|e| Error::Calib(e.to_string()))?;
    Ok((t, k))
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(" ")
}

/// Writes `R`, `T`, `K` and `S` lines; parsing the result is exact.
pub fn write_kitti_calib(t: &RigidTransform, k: &CameraIntrinsics) -> String {
    let r = t.rotation.matrix();
    let rows: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect();
    let kk = [k.f_u, 0.0, k.c_u, 0.0, k.f_v, k.c_v, 0.0, 0.0, 1.0];
    format!(
        "R: {}\nT: {}\nK: {}\nS: {} {}\n",
        join(&rows),
        join(t.translation.as_slice()),
        join(&kk),
        k.width,
        k.height
    )
}

/// Little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_velodyne_bin(bytes: &[u8]) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return Err(Error::Format(format!(
            "velodyne scan length {} is not a multiple of 16",
            bytes.len()
        )));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        points.push(Point3::new(f(0) as f64, f(1) as f64, f(2) as f64));
        intensity.push(f(3));
    }
    PointCloud::new(points, Some(intensity))
}

pub fn write_velodyne_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for (i, p) in cloud.points.iter().enumerate() {
        let r = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for x in [p.x as f32, p.y as f32, p.z as f32, r] {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}
