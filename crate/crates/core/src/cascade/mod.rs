//! Cascaded extrinsic estimation.
//!
//! Each stage sees the LiDAR cloud re-expressed under the current estimate
//! and the pseudo-LiDAR cloud, both pillarized in the camera body frame, and
//! predicts a body-axis residual `r`. The estimate becomes
//! `body_motion_in_optical(r) * current`, so stages chain as left-composed
//! corrections on top of the initial (decalibrated) extrinsic.

mod coarse;
mod regressor;

pub use coarse::{coarse_grid_estimate, coarse_grid_match, CoarseGridConfig, CoarseMatch};
pub use regressor::{
    backward, forward_input, mean_loss, regressor_forward, regressor_input, regressor_input_dim, train_on_items,
    train_regressor, ForwardCache, RegressorWeights, TrainHyper, TrainItem, TrainOutcome,
};

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{CalibParams, SPATIAL_LOSS_MAX_POINTS};
use crate::pillar::{pillarize, to_grid_frame, PillarGridConfig, PillarImage, SensorFrame};
use crate::sample::{CalibSample, DecalibrationRange};
use crate::se3::{body_motion_in_optical, optical_motion_in_body, PointCloud, RigidTransform};

pub const MAX_STAGES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    CoarseGrid(CoarseGridConfig),
    ToyRegressor {
        weights: RegressorWeights,
        downsample: usize,
    },
    Identity,
    /// Returns the exact residual from the sample's label. Only useful for
    /// checking the cascade algebra.
    Oracle,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::CoarseGrid(_) => "coarse_grid",
            EstimatorKind::ToyRegressor { .. } => "toy_regressor",
            EstimatorKind::Identity => "identity",
            EstimatorKind::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub range: DecalibrationRange,
}

impl EstimatorSpec {
    /// Coarse search spanning the range's yaw and translation bounds.
    pub fn coarse(range: DecalibrationRange, yaw_step_deg: f64) -> Self {
        Self {
            kind: EstimatorKind::CoarseGrid(CoarseGridConfig {
                yaw_step_deg,
                yaw_max_deg: range.yaw_max,
                trans_max_cm: range.trans_max,
                ..CoarseGridConfig::default()
            }),
            range,
        }
    }

    pub fn regressor(range: DecalibrationRange, weights: RegressorWeights, downsample: usize) -> Self {
        Self {
            kind: EstimatorKind::ToyRegressor { weights, downsample },
            range,
        }
    }

    pub fn identity(range: DecalibrationRange) -> Self {
        Self {
            kind: EstimatorKind::Identity,
            range,
        }
    }

    pub fn oracle(range: DecalibrationRange) -> Self {
        Self {
            kind: EstimatorKind::Oracle,
            range,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub stages: Vec<EstimatorSpec>,
    pub pillar: PillarGridConfig,
}

impl CascadeConfig {
    pub fn new(stages: Vec<EstimatorSpec>, pillar: PillarGridConfig) -> Result<Self> {
        let c = Self { stages, pillar };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() || self.stages.len() > MAX_STAGES {
            return Err(Error::Config(format!(
                "cascade needs 1 to {MAX_STAGES} stages, got {}",
                self.stages.len()
            )));
        }
        self.pillar.validate()?;
        for s in &self.stages {
            s.range.validate()?;
            match &s.kind {
                EstimatorKind::CoarseGrid(c) => c.validate()?,
                EstimatorKind::ToyRegressor { weights, downsample } => {
                    weights.validate()?;
                    let expect = regressor_input_dim(self.pillar.rows(), self.pillar.cols(), *downsample);
                    if *downsample == 0 || weights.input_dim != expect {
                        return Err(Error::Dimension(format!(
                            "regressor takes {} inputs, grid provides {expect}",
                            weights.input_dim
                        )));
                    }
                }
                EstimatorKind::Identity | EstimatorKind::Oracle => {}
            }
        }
        for pair in self.stages.windows(2) {
            if !pair[0].range.contains(&pair[1].range) {
                return Err(Error::Config(format!(
                    "stage ranges must not grow: {:?} then {:?}",
                    pair[0].range, pair[1].range
                )));
            }
        }
        Ok(())
    }
}

/// Serializable stage description; regressor weights are referenced by path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StageSpec {
    CoarseGrid {
        range: DecalibrationRange,
        #[serde(default = "default_yaw_step")]
        yaw_step_deg: f64,
        #[serde(default = "default_min_height")]
        min_height: f64,
        #[serde(default)]
        report_tilt: bool,
    },
    ToyRegressor {
        range: DecalibrationRange,
        weights: PathBuf,
        #[serde(default = "default_downsample")]
        downsample: usize,
    },
    Identity {
        range: DecalibrationRange,
    },
}

fn default_yaw_step() -> f64 {
    CoarseGridConfig::default().yaw_step_deg
}

fn default_min_height() -> f64 {
    CoarseGridConfig::default().min_height
}

fn default_downsample() -> usize {
    TrainHyper::default().downsample
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub pillar: PillarGridConfig,
}

impl CascadeSpec {
    /// Loads referenced weights (relative to `base`) and validates.
    pub fn resolve(&self, base: &Path) -> Result<CascadeConfig> {
        let stages = self
            .stages
            .iter()
            .map(|s| {
                Ok(match s {
                    StageSpec::CoarseGrid {
                        range,
                        yaw_step_deg,
                        min_height,
                        report_tilt,
                    } => {
                        let mut e = EstimatorSpec::coarse(*range, *yaw_step_deg);
                        if let EstimatorKind::CoarseGrid(c) = &mut e.kind {
                            c.min_height = *min_height;
                            c.report_tilt = *report_tilt;
                        }
                        e
                    }
                    StageSpec::ToyRegressor {
                        range,
                        weights,
                        downsample,
                    } => {
                        let p = if weights.is_absolute() {
                            weights.clone()
                        } else {
                            base.join(weights)
                        };
                        let bytes = std::fs::read(&p).map_err(|e| Error::io("weights", &p, e))?;
                        EstimatorSpec::regressor(*range, RegressorWeights::from_bytes(&bytes)?, *downsample)
                    }
                    StageSpec::Identity { range } => EstimatorSpec::identity(*range),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CascadeConfig::new(stages, self.pillar)
    }
}

/// Pseudo-LiDAR cloud and LiDAR-under-`current`, both in the camera body frame.
pub fn stage_clouds(sample: &CalibSample, current: &RigidTransform) -> (PointCloud, PointCloud) {
    let pseudo = to_grid_frame(&sample.pseudo_cloud, SensorFrame::CameraOptical);
    let lidar = to_grid_frame(&current.apply(&sample.lidar_cloud), SensorFrame::CameraOptical);
    (pseudo, lidar)
}

/// Body-axis correction that takes `current` exactly to the true extrinsic.
pub fn exact_residual(sample: &CalibSample, current: &RigidTransform) -> CalibParams {
    CalibParams::from_transform(&optical_motion_in_body(&sample.t_true.compose(&current.inverse())))
}

/// Regression input, loss cloud and label for `sample` seen from `current`.
pub fn prepare_item(
    sample: &CalibSample,
    current: &RigidTransform,
    grid: &PillarGridConfig,
    downsample: usize,
) -> Result<TrainItem> {
    let (pseudo, lidar) = stage_clouds(sample, current);
    if lidar.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let x = regressor_input(&pillarize(&pseudo, grid)?, &pillarize(&lidar, grid)?, downsample)?;
    Ok(TrainItem {
        x,
        cloud: lidar.subsample(SPATIAL_LOSS_MAX_POINTS),
        target: exact_residual(sample, current),
    })
}

fn estimate_residual(
    sample: &CalibSample,
    current: &RigidTransform,
    est: &EstimatorSpec,
    grid: &PillarGridConfig,
    pseudo_img: &PillarImage,
) -> Result<CalibParams> {
    let lidar_img = || -> Result<PillarImage> {
        let (_, lidar) = stage_clouds(sample, current);
        pillarize(&lidar, grid)
    };
    match &est.kind {
        EstimatorKind::Identity => Ok(CalibParams::default()),
        EstimatorKind::Oracle => Ok(exact_residual(sample, current)),
        EstimatorKind::CoarseGrid(c) => coarse_grid_estimate(pseudo_img, &lidar_img()?, c),
        EstimatorKind::ToyRegressor { weights, downsample } => {
            regressor_forward(weights, pseudo_img, &lidar_img()?, *downsample, &est.range)
        }
    }
}

fn apply_residual(r: &CalibParams, current: &RigidTransform) -> Result<RigidTransform> {
    Ok(body_motion_in_optical(&r.to_transform()?).compose(current))
}

/// Runs one estimator and applies its correction to `current`.
pub fn refine_stage(
    sample: &CalibSample,
    current: &RigidTransform,
    est: &EstimatorSpec,
    grid: &PillarGridConfig,
) -> Result<RigidTransform> {
    if matches!(est.kind, EstimatorKind::Identity) {
        return Ok(*current);
    }
    let pseudo = to_grid_frame(&sample.pseudo_cloud, SensorFrame::CameraOptical);
    let pseudo_img = pillarize(&pseudo, grid)?;
    let r = estimate_residual(sample, current, est, grid, &pseudo_img)?;
    apply_residual(&r, current)
}

/// Rotation (geodesic, degrees) and translation (cm) error of an extrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrinsicError {
    pub rotation_deg: f64,
    pub translation_cm: f64,
}

impl ExtrinsicError {
    pub fn between(est: &RigidTransform, truth: &RigidTransform) -> Self {
        Self {
            rotation_deg: est.rotation.geodesic_angle_deg(&truth.rotation),
            translation_cm: (est.translation - truth.translation).norm() * 100.0,
        }
    }

    /// Degrees plus centimeters, used to rank stage outputs.
    pub fn combined(&self) -> f64 {
        self.rotation_deg + self.translation_cm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub estimator: &'static str,
    pub residual: CalibParams,
    pub estimate: RigidTransform,
    pub error: ExtrinsicError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeResult {
    pub estimate: RigidTransform,
    /// Error of the decalibrated starting extrinsic.
    pub initial_error: ExtrinsicError,
    pub stages: Vec<StageTrace>,
}

impl CascadeResult {
    /// Combined error before any stage, then after each stage.
    pub fn error_sequence(&self) -> Vec<f64> {
        std::iter::once(self.initial_error.combined())
            .chain(self.stages.iter().map(|s| s.error.combined()))
            .collect()
    }
}

/// Folds the stages over the sample, starting from the decalibrated
/// extrinsic with no correction applied.
pub fn run_cascade(sample: &CalibSample, cfg: &CascadeConfig) -> Result<CascadeResult> {
    cfg.validate()?;
    let pseudo = to_grid_frame(&sample.pseudo_cloud, SensorFrame::CameraOptical);
    let pseudo_img = pillarize(&pseudo, &cfg.pillar)?;
    let mut current = sample.t_init;
    let mut stages = Vec::with_capacity(cfg.stages.len());
    for est in &cfg.stages {
        let r = estimate_residual(sample, &current, est, &cfg.pillar, &pseudo_img)?;
        current = if matches!(est.kind, EstimatorKind::Identity) {
            current
        } else {
            apply_residual(&r, &current)?
        };
        stages.push(StageTrace {
            estimator: est.kind.name(),
            residual: r,
            estimate: current,
            error: ExtrinsicError::between(&current, &sample.t_true),
        });
    }
    Ok(CascadeResult {
        estimate: current,
        initial_error: ExtrinsicError::between(&sample.t_init, &sample.t_true),
        stages,
    })
}

/// Runs the cascade on every sample in parallel; results keep input order.
pub fn run_cascade_dataset(samples: &[CalibSample], cfg: &CascadeConfig) -> Result<Vec<CascadeResult>> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    cfg.validate()?;
    samples.par_iter().map(|s| run_cascade(s, cfg)).collect()
}
