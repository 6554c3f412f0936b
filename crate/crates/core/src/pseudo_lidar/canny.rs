//! Canny edge detection on depth maps.
//!
//! Depth is min-max normalized to `[0, 255]` over valid pixels, then run
//! through Gaussian smoothing, Sobel gradients, non-maximum suppression and
//! hysteresis. The resulting edges are dilated with a square element.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{DepthMap, EdgeMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CannyConfig {
    /// Weak-edge threshold on the Sobel magnitude of the 8-bit image.
    pub low_threshold: f32,
    pub high_threshold: f32,
    pub gaussian_sigma: f32,
    pub dilation_radius: usize,
}

impl Default for CannyConfig {
    fn default() -> Self {
        Self {
            low_threshold: 50.0,
            high_threshold: 150.0,
            gaussian_sigma: 1.0,
            dilation_radius: 1,
        }
    }
}

impl CannyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.low_threshold >= 0.0
            && self.low_threshold <= self.high_threshold
            && self.high_threshold <= 255.0
            && self.gaussian_sigma >= 0.0
            && self.gaussian_sigma.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Canny configuration {self:?}")))
        }
    }
}

/// Per-image min-max normalization of valid depths to `[0, 255]`.
/// Invalid pixels map to 0; a constant image maps to all zeros.
pub fn normalize_depth(d: &DepthMap) -> Vec<f32> {
    let (lo, hi) = d
        .depth
        .iter()
        .zip(&d.valid)
        .filter(|(_, v)| **v)
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), (z, _)| {
            (lo.min(*z), hi.max(*z))
        });
    let span = hi - lo;
    d.depth
        .iter()
        .zip(&d.valid)
        .map(|(z, v)| if *v && span > 0.0 { (z - lo) / span * 255.0 } else { 0.0 })
        .collect()
}

pub fn detect_depth_edges(d: &DepthMap, cfg: &CannyConfig) -> EdgeMask {
    let (w, h) = (d.width, d.height);
    if w == 0 || h == 0 {
        return EdgeMask::empty(w, h);
    }
    let img = normalize_depth(d);
    let smooth = gaussian_blur(&img, w, h, cfg.gaussian_sigma);
    let (gx, gy) = sobel(&smooth, w, h);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(x, y)| x.hypot(*y)).collect();
    let thin = non_max_suppression(&mag, &gx, &gy, w, h);
    let edges = hysteresis(&thin, w, h, cfg.low_threshold, cfg.high_threshold);
    let mut edge = dilate(&edges, w, h, cfg.dilation_radius);
    for (e, v) in edge.iter_mut().zip(&d.valid) {
        *e &= *v;
    }
    EdgeMask {
        width: w,
        height: h,
        edge,
    }
}

fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as isize;
    let two_s2 = 2.0 * sigma * sigma;
    let k: Vec<f32> = (-radius..=radius).map(|i| (-((i * i) as f32) / two_s2).exp()).collect();
    let sum: f32 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

fn gaussian_blur(img: &[f32], w: usize, h: usize, sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return img.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = clamp_index(x as isize + j as isize - r, w);
                acc += kv * img[y * w + xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = clamp_index(y as isize + j as isize - r, h);
                acc += kv * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Unnormalized 3x3 Sobel with replicated borders.
fn sobel(img: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let at = |x: isize, y: isize| img[clamp_index(y, h) * w + clamp_index(x, w)];
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Keeps local maxima along the quantized gradient direction. Plateaus of
/// equal magnitude keep only their last pixel along the direction, so a
/// symmetric step yields a one-pixel-wide edge.
fn non_max_suppression(mag: &[f32], gx: &[f32], gy: &[f32], w: usize, h: usize) -> Vec<f32> {
    let get = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (dx, dy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            let before = get(xi - dx, yi - dy);
            let after = get(xi + dx, yi + dy);
            if m >= before && m > after {
                out[i] = m;
            }
        }
    }
    out
}

fn hysteresis(thin: &[f32], w: usize, h: usize, low: f32, high: f32) -> Vec<bool> {
    let mut edge = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, m) in thin.iter().enumerate() {
        if *m > 0.0 && *m >= high {
            edge[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] > 0.0 && thin[j] >= low {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edge
}

fn dilate(edges: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return edges.to_vec();
    }
    let r = radius as isize;
    let mut out = vec![false; w * h];
    for (i, _) in edges.iter().enumerate().filter(|(_, e)| **e) {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for ny in (y - r).max(0)..=(y + r).min(h as isize - 1) {
            for nx in (x - r).max(0)..=(x + r).min(w as isize - 1) {
                out[ny as usize * w + nx as usize] = true;
            }
        }
    }
    out
}
