//! Multi-view training data: RGBA images with their cameras.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::scene::LightConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    /// Linear RGBA, straight (not premultiplied) color.
    pub image: Image,
    pub camera: CameraView,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    pub views: Vec<View>,
    pub background: Vec3,
    /// Light used for shading-aware phases.
    pub light: LightConfig,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl MultiViewDataset {
    pub fn new(views: Vec<View>, background: Vec3, light: LightConfig) -> Self {
        let train = (0..views.len()).collect();
        MultiViewDataset { views, background, light, train, test: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.views.first() else {
            return Err(Error::EmptyDataset);
        };
        let (w, h) = (first.image.width, first.image.height);
        for v in &self.views {
            if v.image.channels != 4 {
                return Err(Error::DimensionMismatch(format!("view {} is not RGBA", v.name)));
            }
            if v.image.width != w || v.image.height != h {
                return Err(Error::DimensionMismatch(format!(
                    "view {} is {}x{}, expected {w}x{h}",
                    v.name, v.image.width, v.image.height
                )));
            }
            if v.camera.width != w || v.camera.height != h {
                return Err(Error::DimensionMismatch(format!("camera of view {} does not match its image", v.name)));
            }
            v.camera.validate()?;
        }
        if let Some(i) = self.train.iter().chain(&self.test).find(|&&i| i >= self.views.len()) {
            return Err(Error::InvalidConfig(format!("split index {i} out of range")));
        }
        Ok(())
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().map(|&i| &self.views[i])
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.test.iter().map(|&i| &self.views[i])
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.views.iter().position(|v| v.name == name)
    }

    /// Radius of the camera rig around its centroid, padded by 10%.
    pub fn camera_extent(&self) -> f64 {
        camera_extent(self.views.iter().map(|v| &v.camera))
    }
}

pub fn camera_extent<'a>(cameras: impl Iterator<Item = &'a CameraView>) -> f64 {
    let centers: Vec<Vec3> = cameras.map(|c| c.center()).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 { 1.1 * r } else { 1.0 }
}
