//! Small dense regression head trained from scratch.
//!
//! Input is the flattened, block-downsampled pseudo-LiDAR image followed by
//! the LiDAR image. One shared ReLU layer forks into a rotation head
//! (`range * tanh`) and a translation head (clamped to the range).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{total_loss, CalibParams, LossWeights};
use crate::pillar::{downsample, PillarImage, FEATURES};
use crate::sample::{CalibSample, DecalibrationRange};

const MAGIC: &[u8; 4] = b"PCRW";

#[derive(Debug, Clone, PartialEq)]
pub struct RegressorWeights {
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `3 x hidden`, row-major.
    pub wr: Vec<f64>,
    pub br: [f64; 3],
    pub wt: Vec<f64>,
    pub bt: [f64; 3],
}

impl RegressorWeights {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            wr: vec![0.0; 3 * hidden],
            br: [0.0; 3],
            wt: vec![0.0; 3 * hidden],
            bt: [0.0; 3],
        }
    }

    /// Uniform fan-in initialization of the shared layer; both heads start
    /// at zero so an untrained model predicts no correction.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut w = Self::zeros(input_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (6.0 / input_dim.max(1) as f64).sqrt();
        w.w1.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
        w
    }

    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim > 0
            && self.hidden > 0
            && self.w1.len() == self.hidden * self.input_dim
            && self.b1.len() == self.hidden
            && self.wr.len() == 3 * self.hidden
            && self.wt.len() == 3 * self.hidden;
        if !dims_ok {
            return Err(Error::Dimension("inconsistent regressor weights".into()));
        }
        let all = self
            .w1
            .iter()
            .chain(&self.b1)
            .chain(&self.wr)
            .chain(&self.br)
            .chain(&self.wt)
            .chain(&self.bt);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite regressor weight".into()));
        }
        Ok(())
    }

    fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.wr, &self.br, &self.wt, &self.bt]
    }

    /// `PCRW`, u32 input_dim, u32 hidden, then little-endian f32 tensors in
    /// the order W1, b1, Wr, br, Wt, bt.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        for t in self.tensors() {
            for v in t {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a regressor weights blob".into()));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (input_dim, hidden) = (u(4), u(8));
        let count = hidden
            .checked_mul(input_dim)
            .and_then(|n| n.checked_add(7 * hidden + 6))
            .ok_or_else(|| Error::Format("regressor dimensions overflow".into()))?;
        if bytes.len() != 12 + 4 * count {
            return Err(Error::Format(format!(
                "regressor blob is {} bytes, expected {}",
                bytes.len(),
                12 + 4 * count
            )));
        }
        let mut vals = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut take = |n: usize| (&mut vals).take(n).collect::<Vec<_>>();
        let w1 = take(hidden * input_dim);
        let b1 = take(hidden);
        let wr = take(3 * hidden);
        let br = take(3);
        let wt = take(3 * hidden);
        let bt = take(3);
        let w = Self {
            input_dim,
            hidden,
            w1,
            b1,
            wr,
            br: [br[0], br[1], br[2]],
            wt,
            bt: [bt[0], bt[1], bt[2]],
        };
        w.validate()?;
        Ok(w)
    }

    fn clear(&mut self) {
        for t in [&mut self.w1, &mut self.b1, &mut self.wr, &mut self.wt] {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        self.br = [0.0; 3];
        self.bt = [0.0; 3];
    }

    fn scale(&mut self, s: f64) {
        for t in [&mut self.w1, &mut self.b1, &mut self.wr, &mut self.wt] {
            t.iter_mut().for_each(|v| *v *= s);
        }
        self.br.iter_mut().chain(self.bt.iter_mut()).for_each(|v| *v *= s);
    }

    fn add_scaled(&mut self, g: &RegressorWeights, s: f64) {
        let axpy = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += s * y);
        axpy(&mut self.w1, &g.w1);
        axpy(&mut self.b1, &g.b1);
        axpy(&mut self.wr, &g.wr);
        axpy(&mut self.br, &g.br);
        axpy(&mut self.wt, &g.wt);
        axpy(&mut self.bt, &g.bt);
    }
}

/// Input width for a grid of `rows x cols` cells downsampled by `factor`.
pub fn regressor_input_dim(rows: usize, cols: usize, factor: usize) -> usize {
    2 * FEATURES * (rows / factor.max(1)) * (cols / factor.max(1))
}

/// Downsamples both images and concatenates their flattened features.
pub fn regressor_input(pseudo: &PillarImage, lidar: &PillarImage, factor: usize) -> Result<Vec<f64>> {
    if pseudo.rows != lidar.rows || pseudo.cols != lidar.cols || pseudo.config != lidar.config {
        return Err(Error::Dimension("pseudo and LiDAR pillar grids differ".into()));
    }
    let mut x = Vec::with_capacity(regressor_input_dim(pseudo.rows, pseudo.cols, factor));
    for img in [pseudo, lidar] {
        let d = downsample(img, factor)?;
        x.extend(d.features.iter().flat_map(|f| f.iter().map(|v| *v as f64)));
    }
    Ok(x)
}

/// Intermediate activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre: Vec<f64>,
    pub h: Vec<f64>,
    pub zr: [f64; 3],
    pub zt: [f64; 3],
}

/// Forward pass on a prepared input vector.
pub fn forward_input(
    w: &RegressorWeights,
    x: &[f64],
    range: &DecalibrationRange,
) -> Result<(CalibParams, ForwardCache)> {
    if x.len() != w.input_dim {
        return Err(Error::Dimension(format!(
            "regressor expects {} inputs, got {}",
            w.input_dim,
            x.len()
        )));
    }
    let nz: Vec<usize> = (0..x.len()).filter(|&k| x[k] != 0.0).collect();
    let pre: Vec<f64> = (0..w.hidden)
        .map(|j| {
            let row = &w.w1[j * w.input_dim..(j + 1) * w.input_dim];
            nz.iter().map(|&k| row[k] * x[k]).sum::<f64>() + w.b1[j]
        })
        .collect();
    let h: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let head = |m: &[f64], b: &[f64; 3], i: usize| {
        m[i * w.hidden..(i + 1) * w.hidden]
            .iter()
            .zip(&h)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + b[i]
    };
    let zr = [0, 1, 2].map(|i| head(&w.wr, &w.br, i));
    let zt = [0, 1, 2].map(|i| head(&w.wt, &w.bt, i));
    let rb = range.rotation_bounds();
    let tb = range.trans_bound();
    let mut out = [0.0; 6];
    for i in 0..3 {
        out[i] = rb[i] * zr[i].tanh();
        out[3 + i] = zt[i].clamp(-tb, tb);
    }
    Ok((CalibParams::from_array(out), ForwardCache { pre, h, zr, zt }))
}

pub fn regressor_forward(
    w: &RegressorWeights,
    pseudo: &PillarImage,
    lidar: &PillarImage,
    factor: usize,
    range: &DecalibrationRange,
) -> Result<CalibParams> {
    let x = regressor_input(pseudo, lidar, factor)?;
    Ok(forward_input(w, &x, range)?.0)
}

/// Gradient of a scalar loss with respect to every weight, given the loss
/// gradient with respect to the six output parameters.
pub fn backward(
    w: &RegressorWeights,
    x: &[f64],
    cache: &ForwardCache,
    range: &DecalibrationRange,
    d_out: &[f64; 6],
) -> RegressorWeights {
    let mut g = RegressorWeights::zeros(w.input_dim, w.hidden);
    accumulate_backward(&mut g, w, x, cache, range, d_out);
    g
}

/// Adds the gradient of one example into `g`.
fn accumulate_backward(
    g: &mut RegressorWeights,
    w: &RegressorWeights,
    x: &[f64],
    cache: &ForwardCache,
    range: &DecalibrationRange,
    d_out: &[f64; 6],
) {
    let rb = range.rotation_bounds();
    let tb = range.trans_bound();
    let mut dzr = [0.0; 3];
    let mut dzt = [0.0; 3];
    for i in 0..3 {
        let t = cache.zr[i].tanh();
        dzr[i] = d_out[i] * rb[i] * (1.0 - t * t);
        dzt[i] = if cache.zt[i].abs() < tb { d_out[3 + i] } else { 0.0 };
    }
    let mut dh = vec![0.0; w.hidden];
    for i in 0..3 {
        g.br[i] += dzr[i];
        g.bt[i] += dzt[i];
        for j in 0..w.hidden {
            g.wr[i * w.hidden + j] += dzr[i] * cache.h[j];
            g.wt[i * w.hidden + j] += dzt[i] * cache.h[j];
            dh[j] += dzr[i] * w.wr[i * w.hidden + j] + dzt[i] * w.wt[i * w.hidden + j];
        }
    }
    for j in 0..w.hidden {
        if cache.pre[j] <= 0.0 || dh[j] == 0.0 {
            continue;
        }
        g.b1[j] += dh[j];
        let row = &mut g.w1[j * w.input_dim..(j + 1) * w.input_dim];
        for (k, xv) in x.iter().enumerate() {
            if *xv != 0.0 {
                row[k] += dh[j] * xv;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainHyper {
    pub learning_rate: f64,
    /// Heavy-ball momentum; 0 is plain gradient descent.
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    /// Block size used to shrink pillar images before flattening.
    pub downsample: usize,
    pub seed: u64,
    pub loss: LossWeights,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            learning_rate: 3e-5,
            momentum: 0.0,
            epochs: 100,
            batch_size: 8,
            hidden: 32,
            downsample: 10,
            seed: 0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.batch_size > 0
            && self.hidden > 0
            && self.downsample > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training hyperparameters {self:?}")))
        }
    }
}

/// A sample prepared for regression: network input, loss cloud and label.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub x: Vec<f64>,
    pub cloud: crate::se3::PointCloud,
    pub target: CalibParams,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: RegressorWeights,
    /// Mean total loss before training, then the mean over each epoch's
    /// examples as they were visited.
    pub loss_history: Vec<f64>,
}

fn within(range: &DecalibrationRange, p: &CalibParams) -> bool {
    let rb = range.rotation_bounds();
    let e = p.euler.as_array();
    let tol = 1e-9;
    (0..3).all(|i| e[i].abs() <= rb[i] + tol) && p.translation.iter().all(|t| t.abs() <= range.trans_bound() + tol)
}

/// Mean total loss of the model over prepared items.
pub fn mean_loss(
    w: &RegressorWeights,
    items: &[TrainItem],
    range: &DecalibrationRange,
    lw: &LossWeights,
) -> Result<f64> {
    let mut sum = 0.0;
    for it in items {
        let (pred, _) = forward_input(w, &it.x, range)?;
        sum += total_loss(&it.cloud, &pred, &it.target, lw)?.total;
    }
    Ok(sum / items.len().max(1) as f64)
}

/// Mini-batch gradient descent on the composite calibration loss.
pub fn train_regressor(
    dataset: &[CalibSample],
    range: &DecalibrationRange,
    hyper: &TrainHyper,
    grid: &crate::pillar::PillarGridConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    range.validate()?;
    hyper.validate()?;
    if let Some(i) = dataset.iter().position(|s| !within(range, &s.decal_params)) {
        return Err(Error::Input(format!("sample {i} lies outside the training range")));
    }
    let items = dataset
        .par_iter()
        .map(|s| super::prepare_item(s, &s.t_init, grid, hyper.downsample))
        .collect::<Result<Vec<_>>>()?;
    train_on_items(&items, range, hyper)
}

/// Training loop over already-prepared items.
pub fn train_on_items(items: &[TrainItem], range: &DecalibrationRange, hyper: &TrainHyper) -> Result<TrainOutcome> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    hyper.validate()?;
    let input_dim = items[0].x.len();
    let mut w = RegressorWeights::init(input_dim, hyper.hidden, hyper.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = vec![mean_loss(&w, items, range, &hyper.loss)?];
    let mut grad = RegressorWeights::zeros(input_dim, hyper.hidden);
    let mut velocity = RegressorWeights::zeros(input_dim, hyper.hidden);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            grad.clear();
            for &i in batch {
                let it = &items[i];
                let (pred, cache) = forward_input(&w, &it.x, range)?;
                let l = total_loss(&it.cloud, &pred, &it.target, &hyper.loss)?;
                epoch_loss += l.total;
                accumulate_backward(&mut grad, &w, &it.x, &cache, range, &l.grad);
            }
            let step = -hyper.learning_rate / batch.len() as f64;
            if hyper.momentum > 0.0 {
                velocity.scale(hyper.momentum);
                velocity.add_scaled(&grad, step);
                w.add_scaled(&velocity, 1.0);
            } else {
                w.add_scaled(&grad, step);
            }
        }
        let mean = epoch_loss / items.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Input("training diverged".into()));
        }
        history.push(mean);
    }
    Ok(TrainOutcome {
        weights: w,
        loss_history: history,
    })
}
