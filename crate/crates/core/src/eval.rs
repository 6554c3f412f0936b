//! Error metrics, experiment configuration and report generation.
//!
//! Rotation MAE is the mean over roll/pitch/yaw of each axis' mean absolute
//! wrapped error; the mean geodesic angle is reported alongside it.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{
    prepare_item, run_cascade, CascadeConfig, CascadeResult, CascadeSpec, EstimatorKind, StageSpec, TrainItem,
};
use crate::error::{Error, Result};
use crate::loss::CalibParams;
use crate::pillar::PillarGridConfig;
use crate::pseudo_lidar::CannyConfig;
use crate::sample::{
    generate_scene, indexed_decalibration, load_scene_data, pseudo_cloud, sample_with_decalibration, CalibSample,
    DecalibrationRange, Manifest, SceneConfig, SceneData, Split,
};
use crate::se3::{optical_motion_in_body, wrap_angle, PointCloud, RigidTransform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub n_samples: usize,
    /// Degrees, mean of the three per-axis values.
    pub rotation_mae: f64,
    /// Centimeters, mean of the three per-axis values.
    pub translation_mae: f64,
    /// Roll, pitch, yaw (degrees).
    pub rotation_axes: [f64; 3],
    /// x, y, z (centimeters).
    pub translation_axes: [f64; 3],
    pub geodesic_mae: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fingerprint: Option<String>,
}

/// Per-axis mean absolute errors between predicted and true parameters.
pub fn mae_metrics(preds: &[CalibParams], gts: &[CalibParams]) -> Result<MaeReport> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Input(format!(
            "need equal nonempty prediction and label lists, got {} and {}",
            preds.len(),
            gts.len()
        )));
    }
    let n = preds.len() as f64;
    let mut rot = [0.0; 3];
    let mut trans = [0.0; 3];
    let mut geo = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        let (pa, ga) = (p.as_array(), g.as_array());
        for i in 0..3 {
            rot[i] += wrap_angle(pa[i] - ga[i]).abs().to_degrees();
            trans[i] += (pa[3 + i] - ga[3 + i]).abs() * 100.0;
        }
        geo += p.euler.to_matrix()?.geodesic_angle_deg(&g.euler.to_matrix()?);
    }
    let rotation_axes = rot.map(|v| v / n);
    let translation_axes = trans.map(|v| v / n);
    Ok(MaeReport {
        n_samples: preds.len(),
        rotation_mae: rotation_axes.iter().sum::<f64>() / 3.0,
        translation_mae: translation_axes.iter().sum::<f64>() / 3.0,
        rotation_axes,
        translation_axes,
        geodesic_mae: geo / n,
        fingerprint: None,
    })
}

/// The decalibration implied by an estimate: the body-axis motion that
/// takes `estimate` to the sample's starting extrinsic.
pub fn estimated_decalibration(sample: &CalibSample, estimate: &RigidTransform) -> CalibParams {
    CalibParams::from_transform(&optical_motion_in_body(&sample.t_init.compose(&estimate.inverse())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic {
        #[serde(default)]
        scene: SceneConfig,
        n_scenes: usize,
        #[serde(default = "one")]
        samples_per_scene: usize,
        range: DecalibrationRange,
    },
    Manifest {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<Split>,
        #[serde(default = "one")]
        samples_per_frame: usize,
        range: DecalibrationRange,
    },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeFilter {
    pub enabled: bool,
    pub config: CannyConfig,
}

impl Default for EdgeFilter {
    fn default() -> Self {
        Self {
            enabled: true,
            config: CannyConfig::default(),
        }
    }
}

impl EdgeFilter {
    pub fn active(&self) -> Option<&CannyConfig> {
        self.enabled.then_some(&self.config)
    }
}

/// Cascade rows to evaluate in addition to the full configuration; stage
/// indices refer to `ExperimentConfig::stages`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub label: String,
    pub stages: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub canny: EdgeFilter,
    #[serde(default)]
    pub pillar: PillarGridConfig,
    pub stages: Vec<StageSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ablation: Vec<AblationSpec>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io("config", path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn cascade_spec(&self) -> CascadeSpec {
        CascadeSpec {
            stages: self.stages.clone(),
            pillar: self.pillar,
        }
    }
}

/// A sample with a stable identifier for reports.
#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: String,
    pub sample: CalibSample,
}

fn samples_for(
    data: &SceneData,
    canny: Option<&CannyConfig>,
    range: &DecalibrationRange,
    seed: u64,
    first_index: usize,
    count: usize,
    id: &str,
) -> Result<Vec<LabeledSample>> {
    let pseudo = pseudo_cloud(&data.depth, &data.intrinsics, canny)?;
    (0..count)
        .map(|j| {
            let params = indexed_decalibration(range, seed, (first_index + j) as u64);
            Ok(LabeledSample {
                id: format!("{id}_{j:02}"),
                sample: sample_with_decalibration(data.lidar_cloud.clone(), pseudo.clone(), data.t_true, params)?,
            })
        })
        .collect()
}

/// Generates or loads scenes and draws seeded decalibrations for them.
/// Relative manifest paths resolve against `base`.
pub fn build_dataset(cfg: &ExperimentConfig, base: &Path) -> Result<Vec<LabeledSample>> {
    let canny = cfg.canny.active();
    let nested: Vec<Vec<LabeledSample>> = match &cfg.dataset {
        DatasetSource::Synthetic {
            scene,
            n_scenes,
            samples_per_scene,
            range,
        } => {
            range.validate()?;
            (0..*n_scenes)
                .into_par_iter()
                .map(|i| {
                    let sc = SceneConfig {
                        rng_seed: scene.rng_seed.wrapping_add(i as u64),
                        ..scene.clone()
                    };
                    let data = generate_scene(&sc)?.data;
                    let first = i * samples_per_scene;
                    samples_for(
                        &data,
                        canny,
                        range,
                        cfg.seed,
                        first,
                        *samples_per_scene,
                        &format!("scene{i:04}"),
                    )
                })
                .collect::<Result<_>>()?
        }
        DatasetSource::Manifest {
            path,
            split,
            samples_per_frame,
            range,
        } => {
            range.validate()?;
            let path = if path.is_absolute() {
                path.clone()
            } else {
                base.join(path)
            };
            let manifest = Manifest::load(&path)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let entries: Vec<_> = manifest
                .samples
                .iter()
                .filter(|e| split.is_none_or(|s| e.split == s))
                .collect();
            entries
                .par_iter()
                .enumerate()
                .map(|(i, e)| {
                    let data = load_scene_data(e, dir)?;
                    samples_for(
                        &data,
                        canny,
                        range,
                        cfg.seed,
                        i * samples_per_frame,
                        *samples_per_frame,
                        &e.id,
                    )
                })
                .collect::<Result<_>>()?
        }
    };
    let out: Vec<_> = nested.into_iter().flatten().collect();
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Seeded regression items drawn round-robin from `scenes`. Only the
/// network input and the subsampled loss cloud are kept per item, so large
/// training sets stay small in memory.
pub fn regression_items(
    scenes: &[SceneData],
    canny: Option<&CannyConfig>,
    range: &DecalibrationRange,
    seed: u64,
    count: usize,
    grid: &PillarGridConfig,
    downsample: usize,
) -> Result<Vec<TrainItem>> {
    if scenes.is_empty() || count == 0 {
        return Err(Error::EmptyDataset);
    }
    range.validate()?;
    let pseudo = scenes
        .iter()
        .map(|d| pseudo_cloud(&d.depth, &d.intrinsics, canny))
        .collect::<Result<Vec<_>>>()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let k = i % scenes.len();
            let params = indexed_decalibration(range, seed, i as u64);
            let s = sample_with_decalibration(
                scenes[k].lidar_cloud.clone(),
                pseudo[k].clone(),
                scenes[k].t_true,
                params,
            )?;
            prepare_item(&s, &s.t_init, grid, downsample)
        })
        .collect()
}

/// A decalibrated sample stored by reference to a manifest frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub frame: String,
    /// `[roll, pitch, yaw]` radians and `[x, y, z]` meters, body axes.
    pub params: [f64; 6],
}

/// A set of decalibrated samples over the frames of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    /// Relative paths resolve against the sample-set file's directory.
    pub manifest: PathBuf,
    pub seed: u64,
    pub range: DecalibrationRange,
    #[serde(default)]
    pub canny: EdgeFilter,
    pub samples: Vec<SampleRecord>,
}

impl SampleSet {
    /// Draws `per_frame` seeded decalibrations for every frame (optionally
    /// restricted to one split).
    pub fn decalibrate(
        manifest_path: &Path,
        manifest: &Manifest,
        split: Option<Split>,
        range: DecalibrationRange,
        seed: u64,
        per_frame: usize,
        canny: EdgeFilter,
    ) -> Result<Self> {
        range.validate()?;
        let mut samples = Vec::new();
        for e in manifest.samples.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
            for j in 0..per_frame {
                let p = indexed_decalibration(&range, seed, samples.len() as u64);
                samples.push(SampleRecord {
                    id: format!("{}_{j:02}", e.id),
                    frame: e.id.clone(),
                    params: p.as_array(),
                });
            }
        }
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            manifest: manifest_path.to_path_buf(),
            seed,
            range,
            canny,
            samples,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io("samples", path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io("samples", path, e))
    }

    /// Loads the referenced frames and rebuilds every sample.
    pub fn materialize(&self, base: &Path) -> Result<Vec<LabeledSample>> {
        let mpath = if self.manifest.is_absolute() {
            self.manifest.clone()
        } else {
            base.join(&self.manifest)
        };
        let manifest = Manifest::load(&mpath)?;
        let dir = mpath.parent().unwrap_or(Path::new("."));
        let mut frames: HashMap<&str, (SceneData, PointCloud)> = HashMap::new();
        let mut out = Vec::with_capacity(self.samples.len());
        for r in &self.samples {
            if !frames.contains_key(r.frame.as_str()) {
                let entry = manifest
                    .samples
                    .iter()
                    .find(|e| e.id == r.frame)
                    .ok_or_else(|| Error::Input(format!("frame `{}` is not in {}", r.frame, mpath.display())))?;
                let data = load_scene_data(entry, dir)?;
                let pseudo = pseudo_cloud(&data.depth, &data.intrinsics, self.canny.active())?;
                frames.insert(r.frame.as_str(), (data, pseudo));
            }
            let (data, pseudo) = &frames[r.frame.as_str()];
            out.push(LabeledSample {
                id: r.id.clone(),
                sample: sample_with_decalibration(
                    data.lidar_cloud.clone(),
                    pseudo.clone(),
                    data.t_true,
                    CalibParams::from_array(r.params),
                )?,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMae {
    /// 0 is the uncorrected starting extrinsic.
    pub stage: usize,
    pub estimator: String,
    pub mae: MaeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub stages: Vec<usize>,
    pub mae: MaeReport,
}

/// One sample's decalibration and the estimate after each stage, as
/// `[roll, pitch, yaw]` degrees and `[x, y, z]` centimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub id: String,
    pub decalibration: [f64; 6],
    pub estimates: Vec<[f64; 6]>,
    pub rotation_error_deg: Vec<f64>,
    pub translation_error_cm: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub fingerprint: String,
    pub seed: u64,
    pub n_samples: usize,
    #[serde(rename = "final")]
    pub final_mae: MaeReport,
    pub stages: Vec<StageMae>,
    #[serde(default)]
    pub ablation: Vec<AblationRow>,
    pub samples: Vec<SampleTrace>,
    pub config: ExperimentConfig,
}

impl ExperimentReport {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

fn readable(p: &CalibParams) -> [f64; 6] {
    let a = p.as_array();
    [
        a[0].to_degrees(),
        a[1].to_degrees(),
        a[2].to_degrees(),
        a[3] * 100.0,
        a[4] * 100.0,
        a[5] * 100.0,
    ]
}

/// SHA-256 over the configuration text and every loaded regressor blob.
pub fn fingerprint(cfg: &ExperimentConfig, cascade: &CascadeConfig) -> Result<String> {
    let mut h = Sha256::new();
    h.update(cfg.to_toml()?.as_bytes());
    for s in &cascade.stages {
        if let EstimatorKind::ToyRegressor { weights, .. } = &s.kind {
            h.update(weights.to_bytes());
        }
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn stage_mae(samples: &[LabeledSample], results: &[CascadeResult], stage: usize) -> Result<MaeReport> {
    let gts: Vec<_> = samples.iter().map(|s| s.sample.decal_params).collect();
    let preds: Vec<_> = samples
        .iter()
        .zip(results)
        .map(|(s, r)| {
            let est = if stage == 0 {
                s.sample.t_init
            } else {
                r.stages[stage - 1].estimate
            };
            estimated_decalibration(&s.sample, &est)
        })
        .collect();
    mae_metrics(&preds, &gts)
}

fn run_all(samples: &[LabeledSample], cascade: &CascadeConfig) -> Result<Vec<CascadeResult>> {
    samples.par_iter().map(|s| run_cascade(&s.sample, cascade)).collect()
}

/// Evaluates the cascade on prepared samples. Deterministic: results are
/// aggregated in sample order regardless of thread count.
pub fn evaluate(
    cfg: &ExperimentConfig,
    cascade: &CascadeConfig,
    samples: &[LabeledSample],
) -> Result<ExperimentReport> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let fp = fingerprint(cfg, cascade)?;
    let results = run_all(samples, cascade)?;
    let mut stages = Vec::with_capacity(cascade.stages.len() + 1);
    for k in 0..=cascade.stages.len() {
        stages.push(StageMae {
            stage: k,
            estimator: if k == 0 {
                "initial".into()
            } else {
                cascade.stages[k - 1].kind.name().into()
            },
            mae: stage_mae(samples, &results, k)?,
        });
    }
    let mut ablation = Vec::with_capacity(cfg.ablation.len());
    for row in &cfg.ablation {
        let picked = row
            .stages
            .iter()
            .map(|&i| {
                cascade
                    .stages
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("ablation row `{}` names missing stage {i}", row.label)))
            })
            .collect::<Result<Vec<_>>>()?;
        let sub = CascadeConfig::new(picked, cascade.pillar)?;
        let res = run_all(samples, &sub)?;
        ablation.push(AblationRow {
            label: row.label.clone(),
            stages: row.stages.clone(),
            mae: stage_mae(samples, &res, sub.stages.len())?,
        });
    }
    let traces = samples
        .iter()
        .zip(&results)
        .map(|(s, r)| SampleTrace {
            id: s.id.clone(),
            decalibration: readable(&s.sample.decal_params),
            estimates: r
                .stages
                .iter()
                .map(|t| readable(&estimated_decalibration(&s.sample, &t.estimate)))
                .collect(),
            rotation_error_deg: r.stages.iter().map(|t| t.error.rotation_deg).collect(),
            translation_error_cm: r.stages.iter().map(|t| t.error.translation_cm).collect(),
        })
        .collect();
    let mut final_mae = stages.last().map(|s| s.mae.clone()).unwrap_or_else(|| unreachable!());
    final_mae.fingerprint = Some(fp.clone());
    Ok(ExperimentReport {
        fingerprint: fp,
        seed: cfg.seed,
        n_samples: samples.len(),
        final_mae,
        stages,
        ablation,
        samples: traces,
        config: cfg.clone(),
    })
}

/// Builds the dataset, runs the cascade and, if `cfg.output` is set, writes
/// the report there. Relative paths resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<(MaeReport, ExperimentReport)> {
    let cascade = cfg.cascade_spec().resolve(base)?;
    let samples = build_dataset(cfg, base)?;
    let report = evaluate(cfg, &cascade, &samples)?;
    if let Some(out) = &cfg.output {
        let out = if out.is_absolute() { out.clone() } else { base.join(out) };
        fs::write(&out, report.to_toml()?).map_err(|e| Error::io("report", &out, e))?;
    }
    Ok((report.final_mae.clone(), report))
}
