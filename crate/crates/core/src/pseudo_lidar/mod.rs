//! Depth map to pseudo-LiDAR conversion.
//!
//! Points are produced in the camera optical frame: x right, y down,
//! z forward. The extrinsic transform carries the axis change to any other
//! sensor frame.

mod canny;

pub use canny::{detect_depth_edges, normalize_depth, CannyConfig};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::PointCloud;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub f_u: f64,
    pub f_v: f64,
    pub c_u: f64,
    pub c_v: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(f_u: f64, f_v: f64, c_u: f64, c_v: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            f_u,
            f_v,
            c_u,
            c_v,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.f_u > 0.0
            && self.f_v > 0.0
            && self.c_u >= 0.0
            && self.c_u < self.width as f64
            && self.c_v >= 0.0
            && self.c_v < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera intrinsics {self:?}")))
        }
    }

    /// Continuous pixel coordinates of a camera-frame point with `z > 0`.
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (p.x * self.f_u / p.z + self.c_u, p.y * self.f_v / p.z + self.c_v)
    }
}

/// Dense metric depth image, row-major, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f32>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map; non-finite or non-positive depths become invalid.
    pub fn from_depths(width: usize, height: usize, depth: Vec<f32>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} depth values for a {width}x{height} map",
                depth.len()
            )));
        }
        let valid = depth.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let depth = depth
            .into_iter()
            .map(|d| if d.is_finite() && d > 0.0 { d } else { 0.0 })
            .collect();
        Ok(Self {
            width,
            height,
            depth,
            valid,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> Option<f32> {
        let i = v * self.width + u;
        self.valid[i].then(|| self.depth[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMask {
    pub width: usize,
    pub height: usize,
    pub edge: Vec<bool>,
}

impl EdgeMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            edge: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.edge.iter().filter(|e| **e).count()
    }
}

/// Pinhole back-projection of every valid pixel, in row-major pixel order.
pub fn back_project(d: &DepthMap, k: &CameraIntrinsics) -> Result<PointCloud> {
    if d.width != k.width || d.height != k.height {
        return Err(Error::Dimension(format!(
            "depth map is {}x{}, intrinsics expect {}x{}",
            d.width, d.height, k.width, k.height
        )));
    }
    let mut points = Vec::with_capacity(d.valid_count());
    for v in 0..d.height {
        for u in 0..d.width {
            let i = v * d.width + u;
            if !d.valid[i] {
                continue;
            }
            let z = d.depth[i] as f64;
            let x = (u as f64 - k.c_u) * z / k.f_u;
            let y = (v as f64 - k.c_v) * z / k.f_v;
            points.push(Point3::new(x, y, z));
        }
    }
    Ok(PointCloud::from_points(points))
}

/// Invalidates every pixel flagged in the edge mask.
pub fn filter_edges(d: &DepthMap, m: &EdgeMask) -> Result<DepthMap> {
    if d.width != m.width || d.height != m.height {
        return Err(Error::Dimension(format!(
            "depth map is {}x{}, edge mask is {}x{}",
            d.width, d.height, m.width, m.height
        )));
    }
    let mut out = d.clone();
    for (valid, edge) in out.valid.iter_mut().zip(&m.edge) {
        if *edge {
            *valid = false;
        }
    }
    Ok(out)
}

/// Z-buffer projection of a camera-frame cloud into a depth map.
pub fn render_depth(cloud: &PointCloud, k: &CameraIntrinsics) -> DepthMap {
    let mut out = DepthMap::invalid(k.width, k.height);
    for p in &cloud.points {
        if p.z <= 0.0 {
            continue;
        }
        let (u, v) = k.project(p);
        let (u, v) = (u.round(), v.round());
        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
            continue;
        }
        let i = v as usize * k.width + u as usize;
        let z = p.z as f32;
        if !out.valid[i] || z < out.depth[i] {
            out.depth[i] = z;
            out.valid[i] = true;
        }
    }
    out
}
