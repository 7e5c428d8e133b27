//! Scene editing: real-time photorealistic edits that only touch a scene's
//! edit state, and offline stylization that rewrites textures.

pub mod features;
pub mod stylize;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{BasicSceneModel, ComposedScene, EditState, LightConfig};

/// A photorealistic edit. Scale factors multiply the current edit state so a
/// factor and its reciprocal cancel; assignments replace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PseEdit {
    SetPalette { rgb: [f64; 3] },
    ScaleOpacity { factor: f64 },
    ScaleLighting { k_a: f64, k_d: f64, k_s: f64, beta: f64 },
    SetLightDirection { azimuth_deg: f64, polar_deg: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseCommand {
    /// Entry name or position in the composition.
    pub target: String,
    #[serde(default)]
    pub segment: Option<u32>,
    pub edit: PseEdit,
}

fn check_factor(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} factor must be finite and non-negative, got {v}")))
    }
}

impl PseEdit {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PseEdit::SetPalette { rgb } => {
                if rgb.iter().all(|c| c.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("palette color must be finite".into()))
                }
            }
            PseEdit::ScaleOpacity { factor } => check_factor("opacity", factor),
            PseEdit::ScaleLighting { k_a, k_d, k_s, beta } => {
                check_factor("k_a", k_a)?;
                check_factor("k_d", k_d)?;
                check_factor("k_s", k_s)?;
                check_factor("beta", beta)
            }
            PseEdit::SetLightDirection { azimuth_deg, polar_deg } => {
                if azimuth_deg.is_finite() && polar_deg.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter("light angles must be finite".into()))
                }
            }
        }
    }

    /// The edit state after applying this edit to `state`.
    pub fn applied_to(&self, state: &EditState) -> EditState {
        let mut s = state.clone();
        match *self {
            PseEdit::SetPalette { rgb } => s.palette = Some(rgb),
            PseEdit::ScaleOpacity { factor } => s.opacity *= factor,
            PseEdit::ScaleLighting { k_a, k_d, k_s, beta } => {
                s.k_a *= k_a;
                s.k_d *= k_d;
                s.k_s *= k_s;
                s.beta *= beta;
            }
            PseEdit::SetLightDirection { azimuth_deg, polar_deg } => {
                let d = LightConfig::direction_from_angles(azimuth_deg, polar_deg);
                s.light_dir = Some([d.x, d.y, d.z]);
            }
        }
        s
    }
}

/// Applies an edit to one basic scene. Trained parameters are never touched.
pub fn apply_edit(scene: &mut BasicSceneModel, edit: &PseEdit) -> Result<()> {
    edit.validate()?;
    scene.edit = edit.applied_to(&scene.edit);
    Ok(())
}

/// Applies a command to the addressed entry of a composition. Other entries
/// sharing the same primitives are not affected.
pub fn apply_pse(scene: &mut ComposedScene, cmd: &PseCommand) -> Result<()> {
    cmd.edit.validate()?;
    let index = scene.find(&cmd.target, cmd.segment)?;
    let entry = &mut scene.entries[index];
    let next = cmd.edit.applied_to(&entry.scene.edit);
    Arc::make_mut(&mut entry.scene).edit = next;
    Ok(())
}

#[cfg(test)]
mod tests;
