use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pseudocal::cascade::{run_cascade, train_on_items, CascadeSpec, TrainHyper};
use pseudocal::eval::{
    estimated_decalibration, regression_items, run_experiment, DatasetSource, EdgeFilter, ExperimentConfig, SampleSet,
};
use pseudocal::loss::CalibParams;
use pseudocal::pillar::{self, occupancy, PillarGridConfig, PillarImage};
use pseudocal::sample::{
    generate_scene, load_scene_data, read_velodyne_bin, write_scene_files, Manifest, SceneConfig, Split,
};
use pseudocal::{Error, Result};

use crate::{DecalibrateArgs, EstimateArgs, EvalArgs, GenScenesArgs, InspectArgs, PillarizeArgs, TrainToyArgs};

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path, stage: &'static str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(stage, path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io("output", path, e))
}

fn parent_dir(p: &Path) -> &Path {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    }
}

/// Frames per split for `gen-scenes`. Scene `i` uses `scene.rng_seed + i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SceneSetConfig {
    scene: SceneConfig,
    train: usize,
    val: usize,
    test: usize,
}

impl Default for SceneSetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            train: 8,
            val: 2,
            test: 2,
        }
    }
}

pub fn gen_scenes(a: &GenScenesArgs) -> Result<()> {
    let cfg: SceneSetConfig = read_toml(&a.config, "config")?;
    let splits = [
        (Split::Train, cfg.train),
        (Split::Val, cfg.val),
        (Split::Test, cfg.test),
    ];
    let mut manifest = Manifest::default();
    let mut i = 0u64;
    for (split, n) in splits {
        for _ in 0..n {
            let sc = SceneConfig {
                rng_seed: cfg.scene.rng_seed.wrapping_add(i),
                ..cfg.scene.clone()
            };
            let scene = generate_scene(&sc)?;
            manifest
                .samples
                .push(write_scene_files(&scene.data, &a.out, &format!("f{i:05}"), split)?);
            i += 1;
        }
    }
    if manifest.samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let path = a.out.join("manifest.toml");
    manifest.save(&path)?;
    println!("wrote {} frames to {}", manifest.samples.len(), path.display());
    Ok(())
}

pub fn decalibrate(a: &DecalibrateArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| parent_dir(&a.manifest).join("samples.toml"));
    // Store the manifest relative to the sample set when they share a
    // directory, so the pair can be moved together.
    let same_dir = fs::canonicalize(parent_dir(&a.manifest)).ok() == fs::canonicalize(parent_dir(&out)).ok();
    let stored = match (same_dir, a.manifest.file_name()) {
        (true, Some(name)) => PathBuf::from(name),
        _ => fs::canonicalize(&a.manifest).map_err(|e| Error::io("manifest", &a.manifest, e))?,
    };
    let canny = EdgeFilter {
        enabled: !a.no_canny,
        ..EdgeFilter::default()
    };
    let set = SampleSet::decalibrate(&stored, &manifest, a.split, a.range, a.seed, a.per_frame, canny)?;
    set.save(&out)?;
    println!("wrote {} samples to {}", set.samples.len(), out.display());
    Ok(())
}

fn grid_config(grid: Option<&Path>) -> Result<PillarGridConfig> {
    let g = match grid {
        Some(p) => read_toml(p, "grid")?,
        None => PillarGridConfig::default(),
    };
    g.validate()?;
    Ok(g)
}

pub fn pillarize(a: &PillarizeArgs) -> Result<()> {
    let grid = grid_config(a.grid.as_deref())?;
    let bytes = fs::read(&a.cloud).map_err(|e| Error::io("cloud", &a.cloud, e))?;
    let cloud = read_velodyne_bin(&bytes)?;
    let img = pillar::pillarize(&cloud, &grid)?;
    write_bytes(&a.out, &img.to_bytes())?;
    let occupied = img.features.iter().filter(|f| f[0] > 0.0).count();
    println!(
        "{} points -> {}x{} pillars ({} occupied), wrote {}",
        cloud.len(),
        img.rows,
        img.cols,
        occupied,
        a.out.display()
    );
    Ok(())
}

fn fmt_params(p: &CalibParams) -> String {
    let a = p.as_array();
    format!(
        "roll {:8.3} pitch {:8.3} yaw {:8.3} deg   x {:8.2} y {:8.2} z {:8.2} cm",
        a[0].to_degrees(),
        a[1].to_degrees(),
        a[2].to_degrees(),
        a[3] * 100.0,
        a[4] * 100.0,
        a[5] * 100.0
    )
}

pub fn estimate(a: &EstimateArgs) -> Result<()> {
    let set = SampleSet::load(&a.sample)?;
    let spec: CascadeSpec = read_toml(&a.cascade, "cascade")?;
    let cascade = spec.resolve(parent_dir(&a.cascade))?;
    let mut samples = set.materialize(parent_dir(&a.sample))?;
    if let Some(id) = &a.id {
        samples.retain(|s| &s.id == id);
        if samples.is_empty() {
            return Err(Error::Input(format!("no sample with id `{id}`")));
        }
    }
    for s in &samples {
        let r = run_cascade(&s.sample, &cascade)?;
        println!("sample {}", s.id);
        println!("  decalibration  {}", fmt_params(&s.sample.decal_params));
        println!(
            "  stage 0 {:<14} rot {:9.4} deg  trans {:9.3} cm",
            "initial", r.initial_error.rotation_deg, r.initial_error.translation_cm
        );
        for (k, st) in r.stages.iter().enumerate() {
            println!(
                "  stage {} {:<14} rot {:9.4} deg  trans {:9.3} cm  residual {}",
                k + 1,
                st.estimator,
                st.error.rotation_deg,
                st.error.translation_cm,
                fmt_params(&st.residual)
            );
        }
        println!(
            "  estimate       {}",
            fmt_params(&estimated_decalibration(&s.sample, &r.estimate))
        );
    }
    Ok(())
}

/// Training set-up for `train-toy`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainToyConfig {
    /// Number of decalibrated samples, drawn round-robin over frames.
    samples: usize,
    /// Seed for the decalibration draws (weights use `hyper.seed`).
    seed: u64,
    split: Option<Split>,
    hyper: TrainHyper,
    pillar: PillarGridConfig,
    canny: EdgeFilter,
}

impl Default for TrainToyConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            seed: 0,
            split: Some(Split::Train),
            hyper: TrainHyper::default(),
            pillar: PillarGridConfig::default(),
            canny: EdgeFilter::default(),
        }
    }
}

pub fn train_toy(a: &TrainToyArgs) -> Result<()> {
    let cfg: TrainToyConfig = match &a.hyper {
        Some(p) => read_toml(p, "hyper")?,
        None => TrainToyConfig::default(),
    };
    let manifest = Manifest::load(&a.manifest)?;
    let dir = parent_dir(&a.manifest);
    let scenes = manifest
        .samples
        .iter()
        .filter(|e| cfg.split.is_none_or(|s| e.split == s))
        .map(|e| load_scene_data(e, dir))
        .collect::<Result<Vec<_>>>()?;
    let items = regression_items(
        &scenes,
        cfg.canny.active(),
        &a.range,
        cfg.seed,
        cfg.samples,
        &cfg.pillar,
        cfg.hyper.downsample,
    )?;
    let out = train_on_items(&items, &a.range, &cfg.hyper)?;
    write_bytes(&a.out, &out.weights.to_bytes())?;
    let h = &out.loss_history;
    println!(
        "trained on {} samples from {} frames: loss {:.6} -> {:.6} over {} epochs, wrote {}",
        items.len(),
        scenes.len(),
        h[0],
        h[h.len() - 1],
        h.len() - 1,
        a.out.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let (cfg, base) = match &a.config {
        Some(p) => (ExperimentConfig::load(p)?, parent_dir(p).to_path_buf()),
        None => {
            let (Some(manifest), Some(cascade)) = (&a.manifest, &a.cascade) else {
                return Err(Error::Input(
                    "eval needs --config or both --manifest and --cascade".into(),
                ));
            };
            let mut spec: CascadeSpec = read_toml(cascade, "cascade")?;
            let cdir = parent_dir(cascade);
            for s in &mut spec.stages {
                if let pseudocal::cascade::StageSpec::ToyRegressor { weights, .. } = s {
                    if weights.is_relative() {
                        *weights = cdir.join(&*weights);
                    }
                }
            }
            let cfg = ExperimentConfig {
                seed: a.seed,
                output: None,
                dataset: DatasetSource::Manifest {
                    path: manifest.clone(),
                    split: a.split,
                    samples_per_frame: a.per_frame,
                    range: a.range,
                },
                canny: EdgeFilter {
                    enabled: !a.no_canny,
                    ..EdgeFilter::default()
                },
                pillar: spec.pillar,
                stages: spec.stages,
                ablation: vec![],
            };
            (cfg, PathBuf::from("."))
        }
    };
    let (mae, report) = run_experiment(&cfg, &base)?;
    for s in &report.stages {
        println!(
            "stage {} {:<14} rotation {:9.4} deg  translation {:9.3} cm  geodesic {:9.4} deg",
            s.stage, s.estimator, s.mae.rotation_mae, s.mae.translation_mae, s.mae.geodesic_mae
        );
    }
    for r in &report.ablation {
        println!(
            "ablation {:<24} rotation {:9.4} deg  translation {:9.3} cm",
            r.label, r.mae.rotation_mae, r.mae.translation_mae
        );
    }
    println!(
        "final over {} samples: rotation {:.4} deg, translation {:.3} cm (fingerprint {})",
        mae.n_samples, mae.rotation_mae, mae.translation_mae, report.fingerprint
    );
    if let Some(p) = &a.report {
        write_bytes(p, report.to_toml()?.as_bytes())?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

const SHADES: &[u8] = b" .:-=+*#%@";

/// Text map of the occupancy channel, max-pooled to at most `width` columns.
pub fn occupancy_text(img: &PillarImage, width: usize) -> String {
    let occ = occupancy(img);
    let step = img.cols.div_ceil(width.max(1)).max(1);
    let max = occ.data.iter().cloned().fold(0.0f32, f32::max);
    let mut s = String::new();
    // Rows are printed top-down with +y (left of the sensor) at the top.
    for r0 in (0..img.rows).step_by(step).rev() {
        for c0 in (0..img.cols).step_by(step) {
            let mut v = 0.0f32;
            for r in r0..(r0 + step).min(img.rows) {
                for c in c0..(c0 + step).min(img.cols) {
                    v = v.max(occ.data[r * img.cols + c]);
                }
            }
            let level = if max > 0.0 && v > 0.0 {
                1 + ((v / max) * (SHADES.len() - 2) as f32).round() as usize
            } else {
                0
            };
            s.push(SHADES[level.min(SHADES.len() - 1)] as char);
        }
        s.push('\n');
    }
    s
}

/// Binary PGM of the occupancy channel scaled to 0..255, +y rows first.
pub fn occupancy_pgm(img: &PillarImage) -> Vec<u8> {
    let occ = occupancy(img);
    let max = occ.data.iter().cloned().fold(0.0f32, f32::max);
    let mut out = format!("P5\n{} {}\n255\n", img.cols, img.rows).into_bytes();
    for r in (0..img.rows).rev() {
        for c in 0..img.cols {
            let v = occ.data[r * img.cols + c];
            out.push(if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 });
        }
    }
    out
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let bytes = fs::read(&a.pillars).map_err(|e| Error::io("pillars", &a.pillars, e))?;
    let img = PillarImage::from_bytes(&bytes)?;
    let occupied = img.features.iter().filter(|f| f[0] > 0.0).count();
    println!(
        "{}x{} pillars, cell {} m, x [{}, {}] y [{}, {}], {} occupied",
        img.rows,
        img.cols,
        img.config.cell_size,
        img.config.x_min,
        img.config.x_max,
        img.config.y_min,
        img.config.y_max,
        occupied
    );
    print!("{}", occupancy_text(&img, a.width));
    if let Some(p) = &a.pgm {
        write_bytes(p, &occupancy_pgm(&img))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}
