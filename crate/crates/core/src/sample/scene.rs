//! Seeded synthetic street scenes: a ground plane plus axis-aligned boxes,
//! observed by a ray-cast spinning LiDAR and a ray-cast pinhole depth camera.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SceneData;
use crate::error::{Error, Result};
use crate::pseudo_lidar::{CameraIntrinsics, DepthMap};
use crate::se3::{body_to_optical, EulerAngles, PointCloud, RigidTransform};

/// Camera body pose in the LiDAR frame (degrees, meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraMount {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        // Roughly the KITTI rig: camera just ahead of and below the LiDAR.
        Self {
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            x: 0.27,
            y: 0.0,
            z: -0.08,
        }
    }
}

impl CameraMount {
    /// LiDAR to camera optical frame.
    pub fn extrinsic(&self) -> Result<RigidTransform> {
        let body_in_lidar = RigidTransform::from_euler(
            EulerAngles::from_degrees(self.roll, self.pitch, self.yaw),
            Vector3::new(self.x, self.y, self.z),
        )?;
        Ok(body_to_optical().compose(&body_in_lidar.inverse()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub n_boxes: usize,
    /// Min and max box edge length, meters.
    pub box_size_range: [f64; 2],
    /// Box centers lie in `[-area_extent, area_extent]^2`.
    pub area_extent: f64,
    pub ground_z: f64,
    /// Keep-out radius around the sensors, meters.
    pub min_clearance: f64,
    pub lidar_channels: usize,
    /// Degrees between azimuth samples.
    pub lidar_azimuth_step: f64,
    /// Lowest and highest beam elevation, degrees.
    pub lidar_elevation_range: [f64; 2],
    pub max_range: f64,
    pub camera: CameraIntrinsics,
    pub mount: CameraMount,
    /// Box-filter radius applied to the depth image to mimic the smeared
    /// object boundaries of monocular depth. 0 keeps exact depth.
    pub depth_edge_blur: usize,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_boxes: 24,
            box_size_range: [1.5, 5.0],
            area_extent: 30.0,
            ground_z: -1.73,
            min_clearance: 3.0,
            lidar_channels: 32,
            lidar_azimuth_step: 0.6,
            lidar_elevation_range: [-24.8, 2.0],
            max_range: 70.0,
            camera: CameraIntrinsics {
                f_u: 180.0,
                f_v: 180.0,
                c_u: 160.0,
                c_v: 48.0,
                width: 320,
                height: 96,
            },
            mount: CameraMount::default(),
            depth_edge_blur: 2,
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.box_size_range;
        let [el_lo, el_hi] = self.lidar_elevation_range;
        let ok = lo > 0.0
            && hi >= lo
            && self.area_extent > 0.0
            && self.min_clearance >= 0.0
            && self.lidar_channels >= 2
            && self.lidar_azimuth_step > 0.0
            && self.lidar_azimuth_step <= 360.0
            && el_lo < el_hi
            && self.max_range > 0.0
            && self.ground_z.is_finite();
        if !ok {
            return Err(Error::Config("invalid scene configuration".into()));
        }
        self.camera.validate()
    }
}

/// Axis-aligned box in the LiDAR frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    /// Slab test; returns the entry distance along the ray if it is positive.
    fn intersect(&self, o: &Point3<f64>, d: &Vector3<f64>) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t0 <= t1 && t0 > 1e-9).then_some(t0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Surface {
    Ground,
    Box,
}

impl Surface {
    fn intensity(self) -> f32 {
        match self {
            Surface::Ground => 0.2,
            Surface::Box => 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub boxes: Vec<Aabb>,
    pub data: SceneData,
}

impl Scene {
    /// Nearest hit along a ray within `max_t`.
    pub fn raycast(&self, o: &Point3<f64>, d: &Vector3<f64>, max_t: f64) -> Option<(f64, Surface)> {
        cast(&self.boxes, self.config.ground_z, o, d, max_t)
    }
}

fn cast(boxes: &[Aabb], ground_z: f64, o: &Point3<f64>, d: &Vector3<f64>, max_t: f64) -> Option<(f64, Surface)> {
    let mut best: Option<(f64, Surface)> = None;
    if d.z < 0.0 {
        let t = (ground_z - o.z) / d.z;
        if t > 0.0 && t <= max_t {
            best = Some((t, Surface::Ground));
        }
    }
    for b in boxes {
        if let Some(t) = b.intersect(o, d) {
            if t <= max_t && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, Surface::Box));
            }
        }
    }
    best
}

fn place_boxes(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Aabb> {
    let [lo, hi] = cfg.box_size_range;
    let mut boxes = Vec::with_capacity(cfg.n_boxes);
    let mut attempts = 0;
    while boxes.len() < cfg.n_boxes && attempts < cfg.n_boxes * 100 {
        attempts += 1;
        let size = [
            rng.random_range(lo..=hi),
            rng.random_range(lo..=hi),
            rng.random_range(lo..=hi),
        ];
        let cx = rng.random_range(-cfg.area_extent..=cfg.area_extent);
        let cy = rng.random_range(-cfg.area_extent..=cfg.area_extent);
        let half_diag = 0.5 * size[0].hypot(size[1]);
        if cx.hypot(cy) < cfg.min_clearance + half_diag {
            continue;
        }
        boxes.push(Aabb {
            min: [cx - size[0] / 2.0, cy - size[1] / 2.0, cfg.ground_z],
            max: [cx + size[0] / 2.0, cy + size[1] / 2.0, cfg.ground_z + size[2]],
        });
    }
    boxes
}

fn scan_lidar(cfg: &SceneConfig, boxes: &[Aabb]) -> PointCloud {
    let [el_lo, el_hi] = cfg.lidar_elevation_range;
    let n_az = (360.0 / cfg.lidar_azimuth_step).round().max(1.0) as usize;
    let origin = Point3::origin();
    let mut points = Vec::new();
    let mut intensity = Vec::new();
    for ring in 0..cfg.lidar_channels {
        let el = (el_lo + (el_hi - el_lo) * ring as f64 / (cfg.lidar_channels - 1) as f64).to_radians();
        for k in 0..n_az {
            let az = (k as f64 * 360.0 / n_az as f64).to_radians();
            let d = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            if let Some((t, s)) = cast(boxes, cfg.ground_z, &origin, &d, cfg.max_range) {
                points.push(origin + d * t);
                intensity.push(s.intensity());
            }
        }
    }
    PointCloud {
        points,
        intensity: Some(intensity),
    }
}

fn render_camera(cfg: &SceneConfig, boxes: &[Aabb], t_true: &RigidTransform) -> DepthMap {
    let k = &cfg.camera;
    let r_inv = t_true.rotation.transpose();
    let center = Point3::from(-(r_inv.matrix() * t_true.translation));
    let mut depth = vec![0.0f32; k.width * k.height];
    for v in 0..k.height {
        for u in 0..k.width {
            // Ray with unit optical z, so the hit parameter is the depth.
            let d_opt = Vector3::new((u as f64 - k.c_u) / k.f_u, (v as f64 - k.c_v) / k.f_v, 1.0);
            let d = r_inv.matrix() * d_opt;
            if let Some((t, _)) = cast(boxes, cfg.ground_z, &center, &d, cfg.max_range) {
                depth[v * k.width + u] = t as f32;
            }
        }
    }
    let map = DepthMap::from_depths(k.width, k.height, depth).expect("sized to intrinsics");
    box_blur(&map, cfg.depth_edge_blur)
}

/// Mean over valid neighbors in a `(2r+1)^2` window; validity is unchanged.
fn box_blur(d: &DepthMap, r: usize) -> DepthMap {
    if r == 0 {
        return d.clone();
    }
    let (w, h) = (d.width as isize, d.height as isize);
    let r = r as isize;
    let mut out = d.clone();
    for v in 0..h {
        for u in 0..w {
            let i = (v * w + u) as usize;
            if !d.valid[i] {
                continue;
            }
            let (mut sum, mut n) = (0.0f64, 0u32);
            for dv in -r..=r {
                for du in -r..=r {
                    let (uu, vv) = (u + du, v + dv);
                    if uu < 0 || vv < 0 || uu >= w || vv >= h {
                        continue;
                    }
                    let j = (vv * w + uu) as usize;
                    if d.valid[j] {
                        sum += d.depth[j] as f64;
                        n += 1;
                    }
                }
            }
            out.depth[i] = (sum / n as f64) as f32;
        }
    }
    out
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let boxes = place_boxes(cfg, &mut rng);
    let t_true = cfg.mount.extrinsic()?;
    let lidar_cloud = scan_lidar(cfg, &boxes);
    let depth = render_camera(cfg, &boxes, &t_true);
    Ok(Scene {
        config: cfg.clone(),
        boxes,
        data: SceneData {
            lidar_cloud,
            depth,
            intrinsics: cfg.camera,
            t_true,
        },
    })
}

/// Near plateau on the left half, far plateau on the right, joined by a
/// linear ramp `ramp_px` wide (0 gives a hard step).
pub fn two_plateau_depth(width: usize, height: usize, near: f32, far: f32, ramp_px: usize) -> DepthMap {
    let mid = width as f64 / 2.0;
    let half = ramp_px as f64 / 2.0;
    let mut depth = Vec::with_capacity(width * height);
    for _ in 0..height {
        for u in 0..width {
            let x = u as f64 + 0.5;
            let a = if ramp_px == 0 {
                if x < mid {
                    0.0
                } else {
                    1.0
                }
            } else {
                ((x - (mid - half)) / ramp_px as f64).clamp(0.0, 1.0)
            };
            depth.push((near as f64 + a * (far - near) as f64) as f32);
        }
    }
    DepthMap::from_depths(width, height, depth).expect("sized by construction")
}
