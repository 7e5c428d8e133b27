//! Wire messages. Text frames carry JSON objects tagged by `type`; a
//! `frame` message is always followed by one binary message holding
//! `width * height * 4` bytes of row-major RGBA8.

use serde::{Deserialize, Serialize};

use texgs::camera::CameraView;
use texgs::edit::PseEdit;
use texgs::error::Error as CoreError;
use texgs::render::RenderMode;

use crate::ServiceError;

/// Camera of a render request: a camera-to-world matrix plus either a
/// vertical field of view or full pinhole intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    /// Row-major camera-to-world transform.
    pub c2w: [f64; 16],
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cy: Option<f64>,
}

/// Frames larger than this in either dimension are refused.
pub const MAX_FRAME_SIDE: usize = 4096;

impl CameraSpec {
    pub fn from_camera(camera: &CameraView) -> Self {
        let mut c2w = [0.0; 16];
        for r in 0..4 {
            c2w[r * 4..r * 4 + 4].copy_from_slice(&camera.c2w[r]);
        }
        CameraSpec {
            c2w,
            width: camera.width,
            height: camera.height,
            fy_deg: None,
            fx: Some(camera.fx),
            fy: Some(camera.fy),
            cx: Some(camera.cx),
            cy: Some(camera.cy),
        }
    }

    pub fn to_camera(&self) -> Result<CameraView, ServiceError> {
        let invalid = |m: &str| ServiceError::Invalid(m.to_string());
        if self.width == 0 || self.height == 0 || self.width > MAX_FRAME_SIDE || self.height > MAX_FRAME_SIDE {
            return Err(invalid("frame size out of range"));
        }
        let mut c2w = [[0.0; 4]; 4];
        for (r, row) in c2w.iter_mut().enumerate() {
            row.copy_from_slice(&self.c2w[r * 4..r * 4 + 4]);
        }
        let mut camera = match (self.fy_deg, self.fx, self.fy, self.cx, self.cy) {
            (Some(fov), None, None, None, None) => {
                if !(fov > 0.0 && fov < 180.0) {
                    return Err(invalid("fy_deg must be in (0, 180)"));
                }
                CameraView::from_fov_y(self.width, self.height, fov, c2w)
            }
            (None, Some(fx), Some(fy), Some(cx), Some(cy)) => {
                let mut cam = CameraView::from_fov_y(self.width, self.height, 60.0, c2w);
                (cam.fx, cam.fy, cam.cx, cam.cy) = (fx, fy, cx, cy);
                cam
            }
            _ => return Err(invalid("camera needs either fy_deg or all of fx, fy, cx, cy")),
        };
        camera.c2w = c2w;
        camera.validate().map_err(ServiceError::Core)?;
        Ok(camera)
    }
}

/// Render modes offered to clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireMode {
    Shaded,
    Normal,
    Depth,
    /// Unlit base color (palette plus texture).
    Texture,
}

impl WireMode {
    pub fn render_mode(self) -> RenderMode {
        match self {
            WireMode::Shaded => RenderMode::Shaded,
            WireMode::Normal => RenderMode::Normal,
            WireMode::Depth => RenderMode::Depth,
            WireMode::Texture => RenderMode::FlatTexture,
        }
    }
}

/// Edit operations. By default factors multiply the current edit state;
/// with `absolute` set they replace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case")]
pub enum EditOp {
    Palette {
        rgb: [f64; 3],
    },
    Opacity {
        factor: f64,
        #[serde(default)]
        absolute: bool,
    },
    Lighting {
        #[serde(default = "one")]
        k_a: f64,
        #[serde(default = "one")]
        k_d: f64,
        #[serde(default = "one")]
        k_s: f64,
        #[serde(default = "one")]
        beta: f64,
        #[serde(default)]
        absolute: bool,
    },
    LightDir {
        azimuth_deg: f64,
        polar_deg: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl EditOp {
    pub fn to_pse(&self) -> PseEdit {
        match *self {
            EditOp::Palette { rgb } => PseEdit::SetPalette { rgb },
            EditOp::Opacity { factor, .. } => PseEdit::ScaleOpacity { factor },
            EditOp::Lighting { k_a, k_d, k_s, beta, .. } => PseEdit::ScaleLighting { k_a, k_d, k_s, beta },
            EditOp::LightDir { azimuth_deg, polar_deg } => PseEdit::SetLightDirection { azimuth_deg, polar_deg },
        }
    }

    pub fn is_absolute(&self) -> bool {
        matches!(*self, EditOp::Opacity { absolute: true, .. } | EditOp::Lighting { absolute: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum SceneOp {
    /// Replaces the composition with the contents of a scene file.
    Load { path: String },
    Save { path: String },
    /// Appends the scenes of further files to the composition.
    Compose { paths: Vec<String> },
    ToggleVisibility {
        scene: String,
        #[serde(default)]
        segment: Option<u32>,
        #[serde(default)]
        visible: Option<bool>,
    },
    /// Splits a scene into segments using a label table.
    ApplyLabels { scene: String, path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "args", rename_all = "snake_case")]
pub enum JobOp {
    StylizeImage {
        scene: String,
        /// Style image file.
        style: String,
        /// Dataset directory providing the rendering cameras and resolution.
        dataset: String,
        #[serde(default)]
        lambda_style: Option<f64>,
        #[serde(default)]
        iterations: Option<usize>,
        #[serde(default)]
        seed: Option<u64>,
    },
    StylizeText {
        scene: String,
        /// Dataset directory holding the six edited views.
        views: String,
        #[serde(default)]
        iterations: Option<usize>,
    },
    Segment {
        scene: String,
        dataset: String,
        masks: String,
        #[serde(default)]
        threshold: Option<f64>,
        #[serde(default)]
        min_view_fraction: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    RenderRequest {
        camera: CameraSpec,
        #[serde(default = "default_mode")]
        mode: WireMode,
    },
    Edit {
        scene: String,
        #[serde(default)]
        segment: Option<u32>,
        #[serde(flatten)]
        op: EditOp,
    },
    SceneOp {
        #[serde(flatten)]
        op: SceneOp,
    },
    Job {
        #[serde(flatten)]
        op: JobOp,
    },
    /// Asks for the current scene listing.
    List,
}

fn default_mode() -> WireMode {
    WireMode::Shaded
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    /// Position in the composition, usable as a scene id.
    pub index: usize,
    pub name: String,
    pub segment: Option<u32>,
    pub visible: bool,
    pub primitives: usize,
    pub edit: texgs::scene::EditState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    Busy,
    NotFound,
    Invalid,
    Io,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    /// Precedes a binary message of `width * height * 4` bytes.
    Frame { revision: u64, width: usize, height: usize, encoding: String },
    Ack { revision: u64 },
    Error { code: ErrorCode, message: String },
    State { revision: u64, scenes: Vec<SceneInfo>, job: Option<u64> },
    /// Another client (or a finished job) changed the shared scene.
    StateChanged { revision: u64 },
    JobStarted { job: u64 },
    JobDone { job: u64, revision: u64 },
    JobFailed { job: u64, message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

impl From<&ServiceError> for ServerMessage {
    fn from(e: &ServiceError) -> Self {
        let code = match e {
            ServiceError::Malformed(_) => ErrorCode::Malformed,
            ServiceError::Busy => ErrorCode::Busy,
            ServiceError::Invalid(_) => ErrorCode::Invalid,
            ServiceError::Core(c) => match c {
                CoreError::UnknownTarget(_) | CoreError::FileNotFound { .. } => ErrorCode::NotFound,
                CoreError::Io { .. } | CoreError::UnreadableImage { .. } | CoreError::Format(_) => ErrorCode::Io,
                CoreError::NonFinite(_) | CoreError::Contract(_) => ErrorCode::Failed,
                _ => ErrorCode::Invalid,
            },
        };
        ServerMessage::Error { code, message: e.to_string() }
    }
}
