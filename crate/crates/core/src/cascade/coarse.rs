//! Exhaustive yaw / in-plane translation search over pillar images.
//!
//! Each image is first leveled: a ground plane is fitted to the per-cell
//! minimum heights and the cells' representative points are rotated so that
//! plane is horizontal. Cells standing above the ground form a sparse
//! "structure" signal. The pseudo-LiDAR signal is rotated about the grid's
//! metric origin (bilinear splatting), shifted by whole cells, and scored
//! against the LiDAR signal by normalized cross-correlation over the full
//! grid. The winning shift is refined to sub-cell precision by a parabola
//! through the neighboring scores.
//!
//! The resulting alignment `A` satisfies `lidar ~ A(pseudo)`; the estimate
//! returned to the cascade is `A^-1`, reduced to its yaw and translation
//! unless tilt reporting is enabled.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::CalibParams;
use crate::pillar::PillarImage;
use crate::se3::{wrap_angle, EulerAngles, RigidTransform, RotationMatrix};

const TIE_EPS: f64 = 1e-12;
const MIN_GROUND_CELLS: usize = 12;
const MAX_GROUND_TILT_DEG: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseGridConfig {
    pub yaw_step_deg: f64,
    /// Yaw candidates span `[-yaw_max_deg, yaw_max_deg]`.
    pub yaw_max_deg: f64,
    /// In-plane shifts span whole cells within this bound.
    pub trans_max_cm: f64,
    /// Cells whose top is less than this many meters above the fitted ground
    /// are ignored by the matcher. 0 matches on plain occupancy.
    pub min_height: f64,
    /// Level both images on their fitted ground planes before matching.
    pub level: bool,
    /// Refine the winning shift to sub-cell precision.
    pub refine: bool,
    /// Include the relative ground tilt (roll/pitch) in the estimate instead
    /// of returning a pure yaw + translation correction.
    pub report_tilt: bool,
}

impl Default for CoarseGridConfig {
    fn default() -> Self {
        Self {
            yaw_step_deg: 3.0,
            yaw_max_deg: 180.0,
            trans_max_cm: 150.0,
            min_height: 0.5,
            level: true,
            refine: true,
            report_tilt: false,
        }
    }
}

impl CoarseGridConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.yaw_step_deg > 0.0
            && self.yaw_step_deg <= 360.0
            && (0.0..=180.0).contains(&self.yaw_max_deg)
            && self.trans_max_cm >= 0.0
            && self.trans_max_cm.is_finite()
            && self.min_height >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid coarse search {self:?}")))
        }
    }

    /// Candidate yaws in degrees, ascending, with +/-180 deduplicated.
    pub fn yaw_candidates(&self) -> Vec<f64> {
        let n = (self.yaw_max_deg / self.yaw_step_deg + 1e-9).floor() as i64;
        let lo = if self.full_turn() { -n + 1 } else { -n };
        (lo..=n).map(|k| k as f64 * self.yaw_step_deg).collect()
    }

    fn full_turn(&self) -> bool {
        let n = (self.yaw_max_deg / self.yaw_step_deg + 1e-9).floor();
        n * self.yaw_step_deg >= 180.0 - 1e-9
    }
}

/// Best alignment found by the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatch {
    /// Winning grid candidate, before refinement.
    pub yaw_deg: f64,
    /// Whole-cell shift (columns along x, rows along y), before refinement.
    pub shift: (i64, i64),
    pub score: f64,
    /// Full transform taking the pseudo-LiDAR grid frame onto the LiDAR's.
    pub alignment: RigidTransform,
}

/// `z = a x + b y + c`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Plane {
    a: f64,
    b: f64,
    c: f64,
}

impl Plane {
    fn at(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    fn normal(&self) -> Vector3<f64> {
        Vector3::new(-self.a, -self.b, 1.0).normalize()
    }
}

fn fit_plane(pts: &[[f64; 3]]) -> Option<Plane> {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for p in pts {
        let row = Vector3::new(p[0], p[1], 1.0);
        ata += row * row.transpose();
        atb += row * p[2];
    }
    let s = ata.lu().solve(&atb)?;
    s.iter().all(|v| v.is_finite()).then(|| Plane {
        a: s[0],
        b: s[1],
        c: s[2],
    })
}

/// Representative point of an occupied cell: center plus mean offset.
fn cell_point(img: &PillarImage, i: usize) -> (f64, f64) {
    let f = &img.features[i];
    let (cx, cy) = img.config.cell_center(i / img.cols, i % img.cols);
    (cx + f[1] as f64, cy + f[2] as f64)
}

/// Trimmed least-squares fit to per-cell minimum heights.
fn ground_plane(img: &PillarImage) -> Plane {
    let pts: Vec<[f64; 3]> = img
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f[0] > 0.0)
        .map(|(i, f)| {
            let (x, y) = cell_point(img, i);
            [x, y, f[4] as f64]
        })
        .collect();
    let lowest = pts.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
    let flat = Plane {
        a: 0.0,
        b: 0.0,
        c: if lowest.is_finite() { lowest } else { 0.0 },
    };
    if pts.len() < MIN_GROUND_CELLS {
        return flat;
    }
    let Some(mut plane) = fit_plane(&pts) else {
        return flat;
    };
    for tol in [2.0, 1.0, 0.5, 0.25] {
        let inliers: Vec<[f64; 3]> = pts
            .iter()
            .copied()
            .filter(|p| (p[2] - plane.at(p[0], p[1])).abs() < tol)
            .collect();
        if inliers.len() < MIN_GROUND_CELLS {
            break;
        }
        match fit_plane(&inliers) {
            Some(p) => plane = p,
            None => break,
        }
    }
    let tilt = plane.normal().z.clamp(-1.0, 1.0).acos().to_degrees();
    if tilt > MAX_GROUND_TILT_DEG {
        flat
    } else {
        plane
    }
}

/// Rotation taking the plane normal onto +z.
fn leveling(plane: &Plane) -> RigidTransform {
    let r = Rotation3::rotation_between(&plane.normal(), &Vector3::z()).unwrap_or_else(Rotation3::identity);
    RigidTransform::from_rotation(RotationMatrix::from_matrix_unchecked(*r.matrix()))
}

/// Occupied cells after leveling.
struct LeveledCell {
    p: Point3<f64>,
    signal: f64,
}

fn leveled_cells(img: &PillarImage, cfg: &CoarseGridConfig) -> (RigidTransform, Vec<LeveledCell>) {
    let plane = ground_plane(img);
    let lev = if cfg.level {
        leveling(&plane)
    } else {
        RigidTransform::identity()
    };
    let cells = img
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f[0] > 0.0)
        .map(|(i, f)| {
            let (x, y) = cell_point(img, i);
            let above = f[5] as f64 - plane.at(x, y);
            LeveledCell {
                p: lev.transform_point(&Point3::new(x, y, f[3] as f64)),
                signal: if above >= cfg.min_height { f[0] as f64 } else { 0.0 },
            }
        })
        .collect();
    (lev, cells)
}

/// Bilinear splat of `(x, y, value)` samples onto the image grid.
fn splat(img: &PillarImage, pts: impl Iterator<Item = (f64, f64, f64)>, out: &mut [f64]) {
    let cfg = &img.config;
    for (x, y, v) in pts {
        // Continuous cell coordinates, with cell centers at integers.
        let fc = (x - cfg.x_min) / cfg.cell_size - 0.5;
        let fr = (y - cfg.y_min) / cfg.cell_size - 0.5;
        let (c0, r0) = (fc.floor(), fr.floor());
        let (ac, ar) = (fc - c0, fr - r0);
        for (dr, wr) in [(0, 1.0 - ar), (1, ar)] {
            for (dc, wc) in [(0, 1.0 - ac), (1, ac)] {
                let w = wr * wc;
                if w <= 0.0 {
                    continue;
                }
                let (r, col) = (r0 as i64 + dr, c0 as i64 + dc);
                if r < 0 || col < 0 || r >= img.rows as i64 || col >= img.cols as i64 {
                    continue;
                }
                out[r as usize * img.cols + col as usize] += w * v;
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    k: usize,
    yaw_deg: f64,
    shift: (i64, i64),
    score: f64,
}

fn better(a: &Candidate, b: &Candidate) -> bool {
    if a.score > b.score + TIE_EPS {
        return true;
    }
    if a.score < b.score - TIE_EPS {
        return false;
    }
    let key = |m: &Candidate| {
        (
            m.yaw_deg.abs(),
            ((m.shift.0 * m.shift.0 + m.shift.1 * m.shift.1) as f64).sqrt(),
            m.yaw_deg,
            m.shift.0,
            m.shift.1,
        )
    };
    let (ka, kb) = (key(a), key(b));
    ka.0.total_cmp(&kb.0)
        .then(ka.1.total_cmp(&kb.1))
        .then(ka.2.total_cmp(&kb.2))
        .then(ka.3.cmp(&kb.3))
        .then(ka.4.cmp(&kb.4))
        .is_lt()
}

/// Vertex offset of the parabola through `(-1, fm), (0, f0), (1, fp)`.
fn parabola_offset(fm: f64, f0: f64, fp: f64) -> f64 {
    let d = fm - 2.0 * f0 + fp;
    if d < 0.0 {
        (0.5 * (fm - fp) / d).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

fn same_grid(a: &PillarImage, b: &PillarImage) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols || a.config != b.config {
        return Err(Error::Dimension(format!(
            "pillar images differ: {}x{} vs {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(())
}

fn in_plane(yaw_deg: f64, t: Vector3<f64>) -> RigidTransform {
    RigidTransform::from_euler(EulerAngles::new(0.0, 0.0, yaw_deg.to_radians()), t).expect("finite yaw")
}

/// Runs the search and returns the best alignment.
pub fn coarse_grid_match(
    pseudo_img: &PillarImage,
    lidar_img: &PillarImage,
    cfg: &CoarseGridConfig,
) -> Result<CoarseMatch> {
    cfg.validate()?;
    same_grid(pseudo_img, lidar_img)?;
    if pseudo_img.is_empty() || lidar_img.is_empty() {
        return Err(Error::NoOverlap);
    }
    let grid = &lidar_img.config;
    let (rows, cols) = (lidar_img.rows as i64, lidar_img.cols as i64);
    let n = (rows * cols) as f64;

    let (lev_l, cells_l) = leveled_cells(lidar_img, cfg);
    let (lev_p, cells_p) = leveled_cells(pseudo_img, cfg);

    let mut l = vec![0.0; lidar_img.features.len()];
    splat(
        lidar_img,
        cells_l
            .iter()
            .filter(|c| c.signal > 0.0)
            .map(|c| (c.p.x, c.p.y, c.signal)),
        &mut l,
    );
    let sum_l: f64 = l.iter().sum();
    let var_l = l.iter().map(|v| v * v).sum::<f64>() - sum_l * sum_l / n;
    let src: Vec<(f64, f64, f64)> = cells_p
        .iter()
        .filter(|c| c.signal > 0.0)
        .map(|c| (c.p.x, c.p.y, c.signal))
        .collect();

    let reach = (cfg.trans_max_cm / 100.0 / grid.cell_size + 1e-9).floor() as i64;
    let side = (2 * reach + 1) as usize;
    let yaws = cfg.yaw_candidates();
    let mut scores = vec![0.0; yaws.len() * side * side];
    let mut best: Option<Candidate> = None;
    let mut buf = vec![0.0; l.len()];
    let mut rotated: Vec<(i64, i64, f64)> = Vec::new();

    for (k, &yaw_deg) in yaws.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        let (s, c) = yaw_deg.to_radians().sin_cos();
        splat(
            pseudo_img,
            src.iter().map(|&(x, y, v)| (c * x - s * y, s * x + c * y, v)),
            &mut buf,
        );
        rotated.clear();
        rotated.extend(
            buf.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i as i64 / cols, i as i64 % cols, *v)),
        );
        for sy in -reach..=reach {
            for sx in -reach..=reach {
                let (mut dot, mut sp, mut spp) = (0.0, 0.0, 0.0);
                for &(r, c, v) in &rotated {
                    let (rr, cc) = (r + sy, c + sx);
                    if rr < 0 || cc < 0 || rr >= rows || cc >= cols {
                        continue;
                    }
                    dot += v * l[(rr * cols + cc) as usize];
                    sp += v;
                    spp += v * v;
                }
                let denom = ((spp - sp * sp / n) * var_l).sqrt();
                let score = if denom > 0.0 {
                    (dot - sp * sum_l / n) / denom
                } else {
                    0.0
                };
                scores[(k * side + (sy + reach) as usize) * side + (sx + reach) as usize] = score;
                let cand = Candidate {
                    k,
                    yaw_deg,
                    shift: (sx, sy),
                    score,
                };
                if best.as_ref().is_none_or(|b| better(&cand, b)) {
                    best = Some(cand);
                }
            }
        }
    }
    let best = best.expect("at least one candidate");

    let score_at =
        |k: usize, sx: i64, sy: i64| scores[(k * side + (sy + reach) as usize) * side + (sx + reach) as usize];
    let yaw = best.yaw_deg;
    let (mut tx, mut ty) = (best.shift.0 as f64, best.shift.1 as f64);
    if cfg.refine {
        let (k, sx, sy) = (best.k, best.shift.0, best.shift.1);
        if sx.abs() < reach {
            tx += parabola_offset(score_at(k, sx - 1, sy), best.score, score_at(k, sx + 1, sy));
        }
        if sy.abs() < reach {
            ty += parabola_offset(score_at(k, sx, sy - 1), best.score, score_at(k, sx, sy + 1));
        }
    }
    let (dx, dy) = (tx * grid.cell_size, ty * grid.cell_size);
    let dz = height_offset(lidar_img, &cells_l, &cells_p, yaw, dx, dy);
    let planar = in_plane(yaw, Vector3::new(dx, dy, dz));
    Ok(CoarseMatch {
        yaw_deg: best.yaw_deg,
        shift: best.shift,
        score: best.score,
        alignment: lev_l.inverse().compose(&planar).compose(&lev_p),
    })
}

/// Mean leveled-height difference (LiDAR minus aligned pseudo) over cells
/// occupied in both, mapping pseudo cells to their nearest LiDAR cell.
fn height_offset(
    img: &PillarImage,
    lidar: &[LeveledCell],
    pseudo: &[LeveledCell],
    yaw_deg: f64,
    dx: f64,
    dy: f64,
) -> f64 {
    let cfg = &img.config;
    let mut zsum = vec![0.0; img.features.len()];
    let mut zcount = vec![0u32; img.features.len()];
    for c in lidar {
        if let Some((r, col)) = cfg.cell_of(c.p.x, c.p.y) {
            zsum[r * img.cols + col] += c.p.z;
            zcount[r * img.cols + col] += 1;
        }
    }
    let (s, co) = yaw_deg.to_radians().sin_cos();
    let (mut sum, mut count) = (0.0, 0usize);
    for c in pseudo {
        let (x, y) = (co * c.p.x - s * c.p.y + dx, s * c.p.x + co * c.p.y + dy);
        if let Some((r, col)) = cfg.cell_of(x, y) {
            let i = r * img.cols + col;
            if zcount[i] > 0 {
                sum += zsum[i] / zcount[i] as f64 - c.p.z;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Residual correction (grid frame) that undoes the best alignment.
pub fn coarse_grid_estimate(
    pseudo_img: &PillarImage,
    lidar_img: &PillarImage,
    cfg: &CoarseGridConfig,
) -> Result<CalibParams> {
    let a = coarse_grid_match(pseudo_img, lidar_img, cfg)?.alignment;
    if cfg.report_tilt {
        return Ok(CalibParams::from_transform(&a.inverse()));
    }
    let yaw = a.euler().yaw;
    let inv = in_plane(yaw.to_degrees(), a.translation).inverse();
    Ok(CalibParams::new(
        EulerAngles::new(0.0, 0.0, wrap_angle(-yaw)),
        inv.translation,
    ))
}
