//! On-disk datasets: a TOML manifest listing scan, depth and calibration
//! files per frame. Relative paths resolve against the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    parse_kitti_calib, read_depth_png, read_velodyne_bin, write_depth_png, write_kitti_calib, write_velodyne_bin,
    SceneData,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub cloud: PathBuf,
    pub depth: PathBuf,
    pub calib: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io("manifest", path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io("manifest", path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Loads one frame. The image size always comes from the depth PNG.
pub fn load_scene_data(entry: &ManifestEntry, base: &Path) -> Result<SceneData> {
    let cloud_path = resolve(base, &entry.cloud);
    let depth_path = resolve(base, &entry.depth);
    let calib_path = resolve(base, &entry.calib);
    let cloud = fs::read(&cloud_path).map_err(|e| Error::io("cloud", &cloud_path, e))?;
    let depth = fs::read(&depth_path).map_err(|e| Error::io("depth", &depth_path, e))?;
    let calib = fs::read_to_string(&calib_path).map_err(|e| Error::io("calib", &calib_path, e))?;

    let lidar_cloud = read_velodyne_bin(&cloud)?;
    let depth = read_depth_png(&depth)?;
    let (t_true, mut intrinsics) = parse_kitti_calib(&calib)?;
    intrinsics.width = depth.width;
    intrinsics.height = depth.height;
    intrinsics.validate()?;
    Ok(SceneData {
        lidar_cloud,
        depth,
        intrinsics,
        t_true,
    })
}

/// Writes `<id>.bin`, `<id>.png` and `<id>.txt` into `dir`.
pub fn write_scene_files(data: &SceneData, dir: &Path, id: &str, split: Split) -> Result<ManifestEntry> {
    fs::create_dir_all(dir).map_err(|e| Error::io("output", dir, e))?;
    let entry = ManifestEntry {
        id: id.to_string(),
        split,
        cloud: PathBuf::from(format!("{id}.bin")),
        depth: PathBuf::from(format!("{id}.png")),
        calib: PathBuf::from(format!("{id}.txt")),
    };
    let write = |name: &Path, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io("output", &p, e))
    };
    write(&entry.cloud, &write_velodyne_bin(&data.lidar_cloud))?;
    write(&entry.depth, &write_depth_png(&data.depth)?)?;
    write(
        &entry.calib,
        write_kitti_calib(&data.t_true, &data.intrinsics).as_bytes(),
    )?;
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pseudo_lidar::CameraIntrinsics;
    use crate::sample::{generate_scene, SceneConfig};

    #[test]
    fn scene_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            n_boxes: 4,
            lidar_channels: 8,
            lidar_azimuth_step: 4.0,
            camera: CameraIntrinsics::new(40.0, 40.0, 20.0, 8.0, 40, 16).unwrap(),
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let entry = write_scene_files(&scene.data, dir.path(), "f000", Split::Train).unwrap();
        let manifest = Manifest { samples: vec![entry] };
        let mpath = dir.path().join("manifest.toml");
        manifest.save(&mpath).unwrap();
        let loaded = Manifest::load(&mpath).unwrap();
        assert_eq!(loaded, manifest);

        let data = load_scene_data(&loaded.samples[0], dir.path()).unwrap();
        assert_eq!(data.t_true, scene.data.t_true);
        assert_eq!(data.intrinsics, scene.data.intrinsics);
        assert_eq!(data.lidar_cloud.len(), scene.data.lidar_cloud.len());
        assert_eq!(data.depth.valid, scene.data.depth.valid);
        for (a, b) in data.depth.depth.iter().zip(&scene.data.depth.depth) {
            assert!((a - b).abs() <= 1.0 / 512.0 + 1e-6);
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let entry = ManifestEntry {
            id: "x".into(),
            split: Split::Test,
            cloud: "nope.bin".into(),
            depth: "nope.png".into(),
            calib: "nope.txt".into(),
        };
        let err = load_scene_data(&entry, Path::new("/nonexistent")).unwrap_err();
        assert_eq!(err.code(), "IO");
    }
}
