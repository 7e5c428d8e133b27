use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::png::{load_png, save_png, BitDepth};
use super::read_to_string;
use crate::camera::CameraView;
use crate::dataset::{MultiViewDataset, View};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::LightConfig;

pub const MANIFEST_FILE: &str = "cameras.json";

fn default_near() -> f64 {
    0.01
}

fn default_far() -> f64 {
    100.0
}

/// The cameras manifest stored next to the `images/` directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub width: usize,
    pub height: usize,
    pub fl_x: f64,
    pub fl_y: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    #[serde(default)]
    pub background: [f64; 3],
    #[serde(default)]
    pub light: Option<LightConfig>,
    /// Indices of held-out frames; every other frame is used for training.
    #[serde(default)]
    pub test: Vec<usize>,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    /// Image path relative to the dataset directory.
    pub file_path: String,
    /// Camera-to-world, row-major.
    pub transform_matrix: [[f64; 4]; 4],
}

impl FrameEntry {
    fn name(&self) -> String {
        Path::new(&self.file_path).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }
}

impl DatasetManifest {
    /// Named cameras of every frame, in manifest order.
    pub fn cameras(&self) -> Vec<(String, CameraView)> {
        self.frames
            .iter()
            .map(|f| {
                let camera = CameraView {
                    width: self.width,
                    height: self.height,
                    fx: self.fl_x,
                    fy: self.fl_y,
                    cx: self.cx,
                    cy: self.cy,
                    c2w: f.transform_matrix,
                    near: self.near,
                    far: self.far,
                };
                (f.name(), camera)
            })
            .collect()
    }

    /// Manifest for cameras sharing the intrinsics of the first one, with
    /// frames pointing at `images/<name>.png`.
    pub fn from_cameras(cameras: &[(String, CameraView)], background: Vec3, light: Option<LightConfig>) -> Result<Self> {
        let Some((_, first)) = cameras.first() else {
            return Err(Error::EmptyDataset);
        };
        for (name, c) in cameras {
            if (c.width, c.height, c.fx, c.fy, c.cx, c.cy, c.near, c.far)
                != (first.width, first.height, first.fx, first.fy, first.cx, first.cy, first.near, first.far)
            {
                return Err(Error::InvalidParameter(format!("view {name} has different intrinsics")));
            }
        }
        Ok(DatasetManifest {
            width: first.width,
            height: first.height,
            fl_x: first.fx,
            fl_y: first.fy,
            cx: first.cx,
            cy: first.cy,
            near: first.near,
            far: first.far,
            background: [background.x, background.y, background.z],
            light,
            test: Vec::new(),
            frames: cameras
                .iter()
                .map(|(name, c)| FrameEntry { file_path: format!("images/{name}.png"), transform_matrix: c.c2w })
                .collect(),
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path: PathBuf = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// Reads `cameras.json` from a dataset directory, or the file itself when
/// `path` names one.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = read_to_string(&file, "dataset manifest")?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed { line: e.line(), message: format!("{}: {e}", file.display()) })
}

/// Loads `dir/cameras.json` and the images it lists.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<MultiViewDataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir.join(MANIFEST_FILE))?;
    if manifest.frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let views = manifest
        .frames
        .par_iter()
        .zip(manifest.cameras())
        .map(|(f, (name, camera))| -> Result<View> {
            let path = dir.join(&f.file_path);
            if !path.is_file() {
                return Err(Error::FileNotFound { path, context: format!("frame {name}") });
            }
            let image = load_png(&path)?;
            if image.width != manifest.width || image.height != manifest.height {
                return Err(Error::DimensionMismatch(format!(
                    "frame {name} is {}x{}, manifest says {}x{}",
                    image.width, image.height, manifest.width, manifest.height
                )));
            }
            Ok(View { name, image, camera })
        })
        .collect::<Result<Vec<_>>>()?;
    let light = manifest.light.unwrap_or_default();
    let mut dataset = MultiViewDataset::new(views, Vec3::from(manifest.background), light);
    dataset.test = manifest.test.clone();
    dataset.test.sort_unstable();
    dataset.test.dedup();
    dataset.train = (0..dataset.views.len()).filter(|i| dataset.test.binary_search(i).is_err()).collect();
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `dir/cameras.json` and 16-bit RGBA PNGs under `dir/images/`.
/// All views must share one set of intrinsics.
pub fn save_dataset(dataset: &MultiViewDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    dataset.validate()?;
    let cameras: Vec<(String, CameraView)> = dataset.views.iter().map(|v| (v.name.clone(), v.camera.clone())).collect();
    let mut manifest = DatasetManifest::from_cameras(&cameras, dataset.background, Some(dataset.light.clone()))?;
    manifest.test = dataset.test.clone();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    dataset
        .views
        .par_iter()
        .zip(manifest.frames.par_iter())
        .try_for_each(|(v, f)| save_png(&v.image, dir.join(&f.file_path), BitDepth::Sixteen))?;
    manifest.write(dir)
}
