//! Bird's-eye-view pillar encoding.
//!
//! A cloud is bucketed into vertical columns on a regular x/y grid. Each cell
//! holds six statistics over its retained points:
//! `[count_norm, mean_dx, mean_dy, mean_z, min_z, max_z]`, where `mean_dx`
//! and `mean_dy` are offsets from the cell center. Rows follow y, columns x.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{optical_to_body, PointCloud};

pub const FEATURES: usize = 6;
pub const MAX_GRID_DIM: usize = 2048;
const MAGIC: &[u8; 4] = b"PILR";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PillarGridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell_size: f64,
    pub max_points_per_pillar: usize,
    pub z_clip_min: f64,
    pub z_clip_max: f64,
}

impl Default for PillarGridConfig {
    fn default() -> Self {
        Self {
            x_min: -50.0,
            x_max: 50.0,
            y_min: -50.0,
            y_max: 50.0,
            cell_size: 0.5,
            max_points_per_pillar: 32,
            z_clip_min: -3.0,
            z_clip_max: 5.0,
        }
    }
}

impl PillarGridConfig {
    pub fn rows(&self) -> usize {
        ((self.y_max - self.y_min) / self.cell_size).ceil() as usize
    }

    pub fn cols(&self) -> usize {
        ((self.x_max - self.x_min) / self.cell_size).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.x_min,
            self.x_max,
            self.y_min,
            self.y_max,
            self.cell_size,
            self.z_clip_min,
            self.z_clip_max,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite
            || self.x_max <= self.x_min
            || self.y_max <= self.y_min
            || self.cell_size <= 0.0
            || self.z_clip_max < self.z_clip_min
            || self.max_points_per_pillar == 0
        {
            return Err(Error::Config(format!("invalid pillar grid {self:?}")));
        }
        if self.rows() > MAX_GRID_DIM || self.cols() > MAX_GRID_DIM {
            return Err(Error::Config(format!(
                "pillar grid {}x{} exceeds {MAX_GRID_DIM}",
                self.rows(),
                self.cols()
            )));
        }
        Ok(())
    }

    /// Metric center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.x_min + (col as f64 + 0.5) * self.cell_size,
            self.y_min + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing a metric x/y position, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !(x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max) {
            return None;
        }
        let col = ((x - self.x_min) / self.cell_size).floor() as usize;
        let row = ((y - self.y_min) / self.cell_size).floor() as usize;
        (row < self.rows() && col < self.cols()).then_some((row, col))
    }
}

/// Which sensor frame a cloud is expressed in before pillarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorFrame {
    /// x forward, y left, z up; used as-is.
    Lidar,
    /// Camera optical frame; re-axed to x = z_cam, y = -x_cam, z = -y_cam.
    CameraOptical,
}

/// Expresses a cloud in the shared bird's-eye-view grid frame.
pub fn to_grid_frame(cloud: &PointCloud, frame: SensorFrame) -> PointCloud {
    match frame {
        SensorFrame::Lidar => cloud.clone(),
        SensorFrame::CameraOptical => optical_to_body().apply(cloud),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PillarImage {
    pub rows: usize,
    pub cols: usize,
    pub features: Vec<[f32; FEATURES]>,
    pub config: PillarGridConfig,
}

/// Single-channel 2D grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Grid2 {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.cols + col]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| *v as f64).sum()
    }
}

impl PillarImage {
    pub fn zeros(config: PillarGridConfig) -> Self {
        let (rows, cols) = (config.rows(), config.cols());
        Self {
            rows,
            cols,
            features: vec![[0.0; FEATURES]; rows * cols],
            config,
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32; FEATURES] {
        &self.features[row * self.cols + col]
    }

    pub fn is_empty(&self) -> bool {
        self.features.iter().all(|f| f[0] == 0.0)
    }

    /// Retained point count summed over cells.
    pub fn retained_points(&self) -> usize {
        self.features
            .iter()
            .map(|f| (f[0] as f64 * self.config.max_points_per_pillar as f64).round() as usize)
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * FEATURES * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        let c = &self.config;
        for v in [
            c.x_min,
            c.x_max,
            c.y_min,
            c.y_max,
            c.cell_size,
            c.max_points_per_pillar as f64,
            c.z_clip_min,
            c.z_clip_max,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for f in &self.features {
            for v in f {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a PILR pillar image".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let (rows, cols) = (u32_at(4), u32_at(8));
        let c: Vec<f64> = (0..8).map(|i| f64_at(12 + 8 * i)).collect();
        let config = PillarGridConfig {
            x_min: c[0],
            x_max: c[1],
            y_min: c[2],
            y_max: c[3],
            cell_size: c[4],
            max_points_per_pillar: c[5] as usize,
            z_clip_min: c[6],
            z_clip_max: c[7],
        };
        let expected = HEADER_LEN + rows * cols * FEATURES * 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "PILR blob is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let features = bytes[HEADER_LEN..]
            .chunks_exact(FEATURES * 4)
            .map(|chunk| {
                let mut f = [0.0f32; FEATURES];
                for (k, v) in f.iter_mut().enumerate() {
                    *v = f32::from_le_bytes(chunk[4 * k..4 * k + 4].try_into().unwrap());
                }
                f
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            features,
            config,
        })
    }
}

/// Buckets a grid-frame cloud into pillars.
///
/// Each cell keeps the first `max_points_per_pillar` points in cloud order.
/// Statistics are accumulated over the retained points in a canonical
/// (coordinate-sorted) order so the result does not depend on the input
/// order whenever no cell overflows.
pub fn pillarize(cloud: &PointCloud, cfg: &PillarGridConfig) -> Result<PillarImage> {
    cfg.validate()?;
    let mut img = PillarImage::zeros(*cfg);
    let cap = cfg.max_points_per_pillar;
    let mut buckets: Vec<Vec<[f64; 3]>> = vec![Vec::new(); img.rows * img.cols];
    for p in &cloud.points {
        if p.z < cfg.z_clip_min || p.z > cfg.z_clip_max {
            continue;
        }
        if let Some((row, col)) = cfg.cell_of(p.x, p.y) {
            let b = &mut buckets[row * img.cols + col];
            if b.len() < cap {
                b.push([p.x, p.y, p.z]);
            }
        }
    }
    for (i, bucket) in buckets.iter_mut().enumerate() {
        if bucket.is_empty() {
            continue;
        }
        bucket.sort_by(|a, b| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        let n = bucket.len() as f64;
        let (cx, cy) = cfg.cell_center(i / img.cols, i % img.cols);
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in bucket.iter() {
            sx += p[0] - cx;
            sy += p[1] - cy;
            sz += p[2];
            zmin = zmin.min(p[2]);
            zmax = zmax.max(p[2]);
        }
        let mean_z = (sz / n).clamp(zmin, zmax);
        img.features[i] = [
            (n / cap as f64) as f32,
            (sx / n) as f32,
            (sy / n) as f32,
            mean_z as f32,
            zmin as f32,
            zmax as f32,
        ];
    }
    Ok(img)
}

pub fn occupancy(img: &PillarImage) -> Grid2 {
    Grid2 {
        rows: img.rows,
        cols: img.cols,
        data: img.features.iter().map(|f| f[0]).collect(),
    }
}

/// Aggregates `factor x factor` blocks into single cells.
pub fn downsample(img: &PillarImage, factor: usize) -> Result<PillarImage> {
    if factor == 0 || !img.rows.is_multiple_of(factor) || !img.cols.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "factor {factor} does not divide a {}x{} pillar image",
            img.rows, img.cols
        )));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (rows, cols) = (img.rows / factor, img.cols / factor);
    let mut config = img.config;
    config.cell_size *= factor as f64;
    config.max_points_per_pillar *= factor * factor;
    let mut features = vec![[0.0f32; FEATURES]; rows * cols];
    let block = (factor * factor) as f64;
    for r in 0..rows {
        for c in 0..cols {
            let mut occ = 0.0f64;
            let (mut dx, mut dy, mut mz) = (0.0f64, 0.0f64, 0.0f64);
            let (mut zmin, mut zmax) = (f32::INFINITY, f32::NEG_INFINITY);
            let (cx, cy) = config.cell_center(r, c);
            for br in 0..factor {
                for bc in 0..factor {
                    let (fr, fc) = (r * factor + br, c * factor + bc);
                    let f = img.cell(fr, fc);
                    if f[0] <= 0.0 {
                        continue;
                    }
                    // Offsets are re-expressed about the coarse cell center.
                    let (fx, fy) = img.config.cell_center(fr, fc);
                    let w = f[0] as f64;
                    occ += w;
                    dx += w * (fx - cx + f[1] as f64);
                    dy += w * (fy - cy + f[2] as f64);
                    mz += w * f[3] as f64;
                    zmin = zmin.min(f[4]);
                    zmax = zmax.max(f[5]);
                }
            }
            if occ > 0.0 {
                features[r * cols + c] = [
                    (occ / block) as f32,
                    (dx / occ) as f32,
                    (dy / occ) as f32,
                    ((mz / occ) as f32).clamp(zmin, zmax),
                    zmin,
                    zmax,
                ];
            }
        }
    }
    Ok(PillarImage {
        rows,
        cols,
        features,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn small_grid() -> PillarGridConfig {
        PillarGridConfig {
            x_min: 0.0,
            x_max: 4.0,
            y_min: 0.0,
            y_max: 4.0,
            cell_size: 1.0,
            max_points_per_pillar: 4,
            z_clip_min: -10.0,
            z_clip_max: 10.0,
        }
    }

    #[test]
    fn default_grid_is_200_square() {
        let c = PillarGridConfig::default();
        assert_eq!((c.rows(), c.cols()), (200, 200));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn empty_cloud_gives_zero_image() {
        let img = pillarize(&PointCloud::default(), &small_grid()).unwrap();
        assert!(img.features.iter().all(|f| *f == [0.0; FEATURES]));
    }

    #[test]
    fn single_point_at_cell_center() {
        let cloud = PointCloud::from_points(vec![Point3::new(2.5, 1.5, 2.0)]);
        let img = pillarize(&cloud, &small_grid()).unwrap();
        assert_eq!(*img.cell(1, 2), [0.25, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let occupied = img.features.iter().filter(|f| f[0] > 0.0).count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn points_outside_range_are_dropped() {
        let cloud = PointCloud::from_points(vec![
            Point3::new(4.0, 1.0, 0.0),
            Point3::new(-0.1, 1.0, 0.0),
            Point3::new(1.0, 1.0, 11.0),
        ]);
        assert!(pillarize(&cloud, &small_grid()).unwrap().is_empty());
    }

    #[test]
    fn cap_keeps_first_points() {
        let mut cfg = small_grid();
        cfg.max_points_per_pillar = 2;
        let cloud = PointCloud::from_points(vec![
            Point3::new(0.5, 0.5, 1.0),
            Point3::new(0.5, 0.5, 3.0),
            Point3::new(0.5, 0.5, 100.0 / 11.0),
        ]);
        let img = pillarize(&cloud, &cfg).unwrap();
        assert_eq!(*img.cell(0, 0), [1.0, 0.0, 0.0, 2.0, 1.0, 3.0]);
    }

    #[test]
    fn occupancy_channel() {
        let cloud = PointCloud::from_points(vec![Point3::new(0.5, 3.5, 0.0)]);
        let img = pillarize(&cloud, &small_grid()).unwrap();
        let occ = occupancy(&img);
        assert_eq!(occ.data.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(occ.get(3, 0), 0.25);
        assert!(occupancy(&PillarImage::zeros(small_grid()))
            .data
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn downsample_identity_and_mean() {
        let img = pillarize(
            &PointCloud::from_points(vec![Point3::new(0.5, 0.5, 0.0)]),
            &small_grid(),
        )
        .unwrap();
        assert_eq!(downsample(&img, 1).unwrap(), img);
        assert!(matches!(downsample(&img, 3), Err(Error::Dimension(_))));
        assert!(matches!(downsample(&img, 0), Err(Error::Dimension(_))));

        let mut cfg = small_grid();
        cfg.x_max = 2.0;
        cfg.y_max = 2.0;
        cfg.max_points_per_pillar = 1;
        let one = pillarize(&PointCloud::from_points(vec![Point3::new(0.5, 0.5, 0.0)]), &cfg).unwrap();
        let d = downsample(&one, 2).unwrap();
        assert_eq!((d.rows, d.cols), (1, 1));
        assert_eq!(d.features[0][0], 0.25);
        assert!((d.features[0][1] - -0.5).abs() < 1e-6);
        assert!((d.features[0][2] - -0.5).abs() < 1e-6);
    }

    #[test]
    fn downsample_matches_coarser_pillarization() {
        let cfg = PillarGridConfig {
            x_min: -4.0,
            x_max: 4.0,
            y_min: -4.0,
            y_max: 4.0,
            cell_size: 0.5,
            max_points_per_pillar: 1000,
            ..PillarGridConfig::default()
        };
        let pts: Vec<_> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                Point3::new(3.9 * t.sin(), 3.9 * (1.3 * t).cos(), (0.1 * t).sin())
            })
            .collect();
        let cloud = PointCloud::from_points(pts);
        let fine = downsample(&pillarize(&cloud, &cfg).unwrap(), 4).unwrap();
        let coarse_cfg = PillarGridConfig {
            cell_size: 2.0,
            max_points_per_pillar: 16_000,
            ..cfg
        };
        let coarse = pillarize(&cloud, &coarse_cfg).unwrap();
        assert_eq!(fine.config, coarse.config);
        for (a, b) in fine.features.iter().zip(&coarse.features) {
            for k in 0..FEATURES {
                assert!((a[k] - b[k]).abs() < 1e-4, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn blob_rejects_bad_input() {
        assert!(PillarImage::from_bytes(b"nope").is_err());
        let img = PillarImage::zeros(small_grid());
        let mut bytes = img.to_bytes();
        assert_eq!(PillarImage::from_bytes(&bytes).unwrap(), img);
        bytes.pop();
        assert!(matches!(PillarImage::from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn camera_frame_is_reaxed() {
        let c = PointCloud::from_points(vec![Point3::new(1.0, 2.0, 10.0)]);
        let g = to_grid_frame(&c, SensorFrame::CameraOptical);
        assert_eq!(g.points[0], Point3::new(10.0, -1.0, -2.0));
        assert_eq!(to_grid_frame(&c, SensorFrame::Lidar), c);
    }
}
