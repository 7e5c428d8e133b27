//! Pinhole cameras. Camera space follows the usual computer-vision
//! convention: +x right, +y down, +z forward. Pixel `(i, j)` has its center at
//! `(i + 0.5, j + 0.5)`.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rigid transform, row-major.
    pub c2w: [[f64; 4]; 4],
    pub near: f64,
    pub far: f64,
}

impl CameraView {
    /// Camera with a vertical field of view (degrees) and centered principal point.
    pub fn from_fov_y(width: usize, height: usize, fov_y_deg: f64, c2w: [[f64; 4]; 4]) -> Self {
        let fy = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        CameraView {
            width,
            height,
            fx: fy,
            fy,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            c2w,
            near: 0.01,
            far: 100.0,
        }
    }

    /// Camera at `eye` looking at `target`. `up` picks the roll; image +y points
    /// away from it.
    pub fn look_at(
        width: usize,
        height: usize,
        fov_y_deg: f64,
        eye: Vec3,
        target: Vec3,
        up: Vec3,
    ) -> Self {
        Self::from_fov_y(width, height, fov_y_deg, look_at_c2w(eye, target, up))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter(format!(
                "zero-sized image {}x{}",
                self.width, self.height
            )));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .chain(self.c2w.iter().flatten())
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParameter("camera has non-finite or non-positive intrinsics".into()));
        }
        Ok(())
    }

    pub fn c2w_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.c2w[r][c])
    }

    /// Rotation part of camera-to-world (columns are the camera axes in world space).
    pub fn rotation_c2w(&self) -> Mat3 {
        Mat3::from_fn(|r, c| self.c2w[r][c])
    }

    pub fn rotation_w2c(&self) -> Mat3 {
        self.rotation_c2w().transpose()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.c2w[0][3], self.c2w[1][3], self.c2w[2][3])
    }

    pub fn forward(&self) -> Vec3 {
        Vec3::new(self.c2w[0][2], self.c2w[1][2], self.c2w[2][2])
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation_w2c() * (p - self.center())
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation_c2w() * p + self.center()
    }

    /// Projects a camera-space point to continuous pixel coordinates.
    pub fn project(&self, p_cam: &Vec3) -> [f64; 2] {
        [
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ]
    }

    /// Camera-space ray direction through continuous pixel coordinates, with z = 1.
    pub fn ray_dir(&self, px: f64, py: f64) -> Vec3 {
        Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

pub fn look_at_c2w(eye: Vec3, target: Vec3, up: Vec3) -> [[f64; 4]; 4] {
    let forward = (target - eye).normalize();
    let mut right = forward.cross(&up);
    if right.norm() < 1e-9 {
        // looking along `up`; fall back to another deterministic reference axis
        let alt = if forward.y.abs() < 0.9 { Vec3::y() } else { Vec3::x() };
        right = forward.cross(&alt);
    }
    let right = right.normalize();
    let down = forward.cross(&right);
    [
        [right.x, down.x, forward.x, eye.x],
        [right.y, down.y, forward.y, eye.y],
        [right.z, down.z, forward.z, eye.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}
