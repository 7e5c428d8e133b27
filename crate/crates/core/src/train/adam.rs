//! Adam over the per-primitive parameter vectors, with per-group learning
//! rates and the post-step projection onto valid parameters.

use crate::error::{Error, Result};
use crate::math::{normalize_quat, IDENTITY_QUAT};
use crate::render::backward::GradientBundle;
use crate::scene::{BasicSceneModel, ParamGroup};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color_ind: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub shading: f64,
    pub texture: f64,
    pub palette: f64,
}

impl LearningRates {
    pub fn uniform(lr: f64) -> Self {
        LearningRates {
            position: lr,
            rotation: lr,
            scale: lr,
            opacity: lr,
            color_ind: lr,
            sh_dc: lr,
            sh_rest: lr,
            shading: lr,
            texture: lr,
            palette: lr,
        }
    }

    pub fn for_group(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => self.position,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Scale => self.scale,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::ColorInd => self.color_ind,
            ParamGroup::ShDc => self.sh_dc,
            ParamGroup::ShRest => self.sh_rest,
            ParamGroup::Shading => self.shading,
            ParamGroup::Texture => self.texture,
        }
    }
}

/// Log-linear interpolation between `init` and `fin` over `steps`.
pub fn exponential_decay(init: f64, fin: f64, step: usize, steps: usize) -> f64 {
    if steps == 0 {
        return fin;
    }
    let t = (step as f64 / steps as f64).clamp(0.0, 1.0);
    (init.ln() * (1.0 - t) + fin.ln() * t).exp()
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments { m: vec![0.0; n], v: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    prims: Vec<Moments>,
    palette: Moments,
    step: u64,
}

impl AdamState {
    pub fn new(scene: &BasicSceneModel) -> Self {
        AdamState {
            prims: scene.primitives.iter().map(|p| Moments::zeros(p.param_count())).collect(),
            palette: Moments::zeros(3),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.prims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    /// Keeps the moments of primitives where `keep` is true.
    pub fn retain(&mut self, keep: &[bool]) {
        let mut i = 0;
        self.prims.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }

    /// Appends zeroed moments for a new primitive with `param_count` scalars.
    pub fn push_zeroed(&mut self, param_count: usize) {
        self.prims.push(Moments::zeros(param_count));
    }
}

/// One Adam update of every parameter followed by the validity projection:
/// quaternions renormalized, shading coefficients clamped to `k >= 0`,
/// `beta >= 1`, and opacity logits kept finite.
pub fn adam_step(scene: &mut BasicSceneModel, grads: &GradientBundle, state: &mut AdamState, lr: &LearningRates) -> Result<()> {
    if state.prims.len() != scene.len() || grads.primitives.len() != scene.len() {
        return Err(Error::Contract(format!(
            "optimizer state for {} primitives, gradients for {}, scene has {}",
            state.prims.len(),
            grads.primitives.len(),
            scene.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64, rate: f64| {
        *m = BETA1 * *m + (1.0 - BETA1) * g;
        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *param -= rate * m_hat / (v_hat.sqrt() + EPSILON);
    };
    for ((p, g), mom) in scene.primitives.iter_mut().zip(&grads.primitives).zip(state.prims.iter_mut()) {
        let flat = g.flatten();
        let rot_before = p.rot;
        let params = p.params_mut();
        if params.len() != flat.len() || mom.m.len() != flat.len() {
            return Err(Error::Contract("parameter layout changed under the optimizer".into()));
        }
        for (k, (group, param)) in params.into_iter().enumerate() {
            update(param, flat[k], &mut mom.m[k], &mut mom.v[k], lr.for_group(group));
        }
        project(p, p.rot != rot_before);
    }
    for c in 0..3 {
        update(&mut scene.c_palette[c], grads.palette[c], &mut state.palette.m[c], &mut state.palette.v[c], lr.palette);
    }
    Ok(())
}

fn project(p: &mut crate::scene::SurfelPrimitive, rotated: bool) {
    // an untouched quaternion stays bit-identical so frozen geometry is exact
    if rotated {
        p.rot = normalize_quat(&p.rot).unwrap_or(IDENTITY_QUAT);
    }
    p.k_a = p.k_a.max(0.0);
    p.k_d = p.k_d.max(0.0);
    p.k_s = p.k_s.max(0.0);
    p.beta = p.beta.max(1.0);
    if !p.opacity_logit.is_finite() {
        p.opacity_logit = if p.opacity_logit > 0.0 { 30.0 } else { -30.0 };
    }
}
