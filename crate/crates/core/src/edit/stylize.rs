//! Offline non-photorealistic stylization. Only texels are optimized; geometry
//! and shading stay bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraView;
use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::math::Vec3;
use crate::render::backward::{backward, Trainable};
use crate::render::{render_with_record, RenderMode, RenderOptions, RenderTargets};
use crate::scene::{Appearance, BasicSceneModel};
use crate::train::adam::{adam_step, AdamState, LearningRates};
use crate::train::fit::{check_frozen, MetricsRecord, Phase};
use crate::train::loss::{composite_over, photometric};
use crate::train::TrainConfig;

use super::features::{check_adjoint, global_style_loss, nnfm_loss, FeatureExtractor, Features};

/// Half-width of the uniform noise used when texels are re-randomized.
pub const RERANDOMIZE_AMPLITUDE: f64 = 0.05;

/// Number of views in the reduced set used by text-driven stylization.
pub const TEXT_VIEW_COUNT: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageStyleOptions {
    /// Share of the feature-matching term; the rest goes to the global term.
    pub lambda_style: f64,
    pub iterations: usize,
    pub rerandomize: bool,
    pub learning_rate: f64,
    pub seed: u64,
    pub eval_interval: usize,
}

impl ImageStyleOptions {
    pub fn from_config(c: &TrainConfig) -> Self {
        ImageStyleOptions {
            lambda_style: c.lambda_style,
            iterations: c.style_iterations,
            rerandomize: c.style_rerandomize,
            learning_rate: c.lr_texture,
            seed: c.seed,
            eval_interval: c.eval_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextStyleOptions {
    pub iterations: usize,
    pub rerandomize: bool,
    pub learning_rate: f64,
    pub lambda_ssim: f64,
    pub seed: u64,
    pub eval_interval: usize,
}

impl TextStyleOptions {
    pub fn from_config(c: &TrainConfig) -> Self {
        TextStyleOptions {
            iterations: c.text_iterations,
            rerandomize: c.text_rerandomize,
            learning_rate: c.lr_texture,
            lambda_ssim: c.lambda_ssim,
            seed: c.seed,
            eval_interval: c.eval_interval,
        }
    }
}

/// Opacity factor for a stylization step: twice the target during the first
/// third, the target during the second and half of it for the rest.
pub fn opacity_schedule(iteration: usize, total: usize, target: f64) -> f64 {
    if iteration * 3 < total {
        2.0 * target
    } else if iteration * 3 < 2 * total {
        target
    } else {
        0.5 * target
    }
}

/// Bakes the palette into the texels so the texture alone defines the base
/// color. Palette edits have no effect on the result.
pub fn to_stylized(scene: &BasicSceneModel) -> Result<BasicSceneModel> {
    let mut out = scene.clone();
    match scene.appearance {
        Appearance::Stylized => {}
        Appearance::Textured => {
            let palette = scene.effective_palette();
            for p in &mut out.primitives {
                if let Some(tex) = p.texture.as_mut() {
                    for (k, t) in tex.texels.iter_mut().enumerate() {
                        *t += palette[k % 3];
                    }
                }
            }
            out.appearance = Appearance::Stylized;
            out.edit.palette = None;
        }
        other => {
            return Err(Error::InvalidParameter(format!("stylization needs a textured scene, got {other:?}")));
        }
    }
    Ok(out)
}

/// Replaces texture offsets with small uniform noise. For stylized scenes the
/// noise is centred on the effective palette, which they no longer add.
pub fn rerandomize_texels(scene: &mut BasicSceneModel, rng: &mut impl Rng) {
    let base = if scene.appearance == Appearance::Stylized { scene.effective_palette() } else { Vec3::zeros() };
    for p in &mut scene.primitives {
        if let Some(tex) = p.texture.as_mut() {
            for (k, t) in tex.texels.iter_mut().enumerate() {
                *t = base[k % 3] + rng.gen_range(-RERANDOMIZE_AMPLITUDE..RERANDOMIZE_AMPLITUDE);
            }
        }
    }
}

fn require_textured(scene: &BasicSceneModel) -> Result<()> {
    if !scene.appearance.is_textured() || scene.primitives.iter().any(|p| p.texture.is_none()) {
        return Err(Error::InvalidParameter("stylization needs a scene with allocated textures".into()));
    }
    Ok(())
}

fn texture_rates(lr: f64) -> LearningRates {
    LearningRates { texture: lr, ..LearningRates::uniform(0.0) }
}

/// `lambda * nnfm + (1 - lambda) * global` for a rendered RGB image and its
/// gradient on that image. A term with zero weight is skipped entirely.
pub fn image_style_loss(
    render: &Image,
    style: &Features,
    extractor: &dyn FeatureExtractor,
    lambda_style: f64,
) -> Result<(f64, Image)> {
    let feats = extractor.forward(render)?;
    let mut grad = feats.zeros_like();
    let mut loss = 0.0;
    if lambda_style != 0.0 {
        let (l, g) = nnfm_loss(&feats.maps, &style.maps)?;
        loss += lambda_style * l;
        for (dst, src) in grad.maps.iter_mut().zip(g) {
            dst.data = src.data.iter().map(|v| lambda_style * v).collect();
        }
    }
    if lambda_style != 1.0 {
        let w = 1.0 - lambda_style;
        let (l, g) = global_style_loss(&feats.embedding, &style.embedding)?;
        loss += w * l;
        grad.embedding = g.iter().map(|v| w * v).collect();
    }
    Ok((loss, extractor.backward(render, &grad)?))
}

fn rgb(image: &Image, background: &Vec3) -> Result<Image> {
    match image.channels {
        3 => Ok(image.clone()),
        4 => Ok(composite_over(image, background)),
        c => Err(Error::DimensionMismatch(format!("expected an RGB or RGBA image, got {c} channels"))),
    }
}

fn shaded_options(views: &MultiViewDataset) -> RenderOptions {
    RenderOptions { mode: RenderMode::Shaded, light: views.light.clone(), background: views.background }
}

/// Image-prompted stylization over the training views of `views`. Returns a
/// stylized scene whose texels alone carry the view-independent color.
pub fn stylize_image(
    scene: &BasicSceneModel,
    style: &Image,
    extractor: &dyn FeatureExtractor,
    views: &MultiViewDataset,
    options: &ImageStyleOptions,
    log: &mut dyn FnMut(&MetricsRecord),
) -> Result<BasicSceneModel> {
    require_textured(scene)?;
    views.validate()?;
    if views.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&options.lambda_style) {
        return Err(Error::InvalidParameter(format!("style weight must lie in [0, 1], got {}", options.lambda_style)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = scene.clone();
    if options.rerandomize {
        rerandomize_texels(&mut work, &mut rng);
    }
    let mut work = to_stylized(&work)?;
    if options.iterations == 0 {
        return Ok(work);
    }
    let style_rgb = rgb(style, &views.background)?;
    let style_features = extractor.forward(&style_rgb)?;
    check_adjoint(extractor, &style_rgb, options.seed)?;

    let render_options = shaded_options(views);
    let mut adam = AdamState::new(&work);
    let rates = texture_rates(options.learning_rate);
    for it in 1..=options.iterations {
        let view = &views.views[views.train[rng.gen_range(0..views.train.len())]];
        let (targets, record) = render_with_record(&work, &view.camera, &render_options)?;
        let (loss, g_color) = image_style_loss(&targets.color, &style_features, extractor, options.lambda_style)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("image stylization, iteration {it}, view {}: loss {loss}", view.name)));
        }
        let mut grad = RenderTargets::new(targets.width(), targets.height());
        grad.color = g_color;
        let grads = backward(&work, &record, &grad, Trainable::TEXTURE_ONLY)?;
        check_frozen(&grads)?;
        adam_step(&mut work, &grads, &mut adam, &rates)?;
        if (options.eval_interval > 0 && it % options.eval_interval == 0) || it == options.iterations {
            log(&MetricsRecord {
                phase: Phase::StyleImage,
                iteration: it,
                loss_color: loss,
                loss_normal: 0.0,
                loss_alpha: 0.0,
                loss_total: loss,
                psnr: None,
                primitives: work.len(),
            });
        }
    }
    Ok(work)
}

/// Cameras looking at `center` from the front, back, left, right, top and
/// bottom, with `+z` up.
pub fn six_view_cameras(center: Vec3, radius: f64, width: usize, height: usize, fov_y_deg: f64) -> Vec<CameraView> {
    let dirs = [
        (Vec3::new(0.0, -1.0, 0.0), Vec3::z()),
        (Vec3::new(0.0, 1.0, 0.0), Vec3::z()),
        (Vec3::new(-1.0, 0.0, 0.0), Vec3::z()),
        (Vec3::new(1.0, 0.0, 0.0), Vec3::z()),
        (Vec3::new(0.0, 0.0, 1.0), Vec3::y()),
        (Vec3::new(0.0, 0.0, -1.0), Vec3::y()),
    ];
    dirs.iter()
        .map(|(d, up)| CameraView::look_at(width, height, fov_y_deg, center + d * radius, center, *up))
        .collect()
}

fn scene_centroid(scene: &BasicSceneModel) -> Vec3 {
    if scene.is_empty() {
        return Vec3::zeros();
    }
    scene.primitives.iter().map(|p| p.mu).sum::<Vec3>() / scene.len() as f64
}

/// Fits texels to a set of externally edited views, one-time, under the
/// reconstruction loss and the opacity schedule. The scene's own opacity
/// edit is the schedule target and is restored afterwards.
pub fn stylize_text(
    scene: &BasicSceneModel,
    edited: &MultiViewDataset,
    options: &TextStyleOptions,
    log: &mut dyn FnMut(&MetricsRecord),
) -> Result<BasicSceneModel> {
    require_textured(scene)?;
    if edited.views.len() != TEXT_VIEW_COUNT {
        return Err(Error::InvalidParameter(format!(
            "text-driven stylization needs exactly {TEXT_VIEW_COUNT} edited views, got {}",
            edited.views.len()
        )));
    }
    edited.validate()?;
    let centroid = scene_centroid(scene);
    for v in &edited.views {
        let q = v.camera.world_to_camera(&centroid);
        let [x, y] = v.camera.project(&q);
        let inside = x >= 0.0 && y >= 0.0 && x <= v.camera.width as f64 && y <= v.camera.height as f64;
        if q.z <= v.camera.near || !inside {
            return Err(Error::InvalidParameter(format!("camera of view {} does not see the scene", v.name)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut work = scene.clone();
    if options.rerandomize {
        rerandomize_texels(&mut work, &mut rng);
    }
    let targets_rgb: Vec<Image> = edited.views.iter().map(|v| composite_over(&v.image, &edited.background)).collect();
    let target_opacity = work.edit.opacity;
    let render_options = shaded_options(edited);
    let mut adam = AdamState::new(&work);
    let rates = texture_rates(options.learning_rate);
    let mut order: Vec<usize> = Vec::new();
    for it in 1..=options.iterations {
        if order.is_empty() {
            order = (0..TEXT_VIEW_COUNT).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        }
        let index = order.pop().expect("refilled above");
        let view = &edited.views[index];
        work.edit.opacity = opacity_schedule(it - 1, options.iterations, target_opacity);
        let (targets, record) = render_with_record(&work, &view.camera, &render_options)?;
        let (loss, g_color) = photometric(&targets.color, &targets_rgb[index], options.lambda_ssim)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("text stylization, iteration {it}, view {}: loss {loss}", view.name)));
        }
        let mut grad = RenderTargets::new(targets.width(), targets.height());
        grad.color = g_color;
        let grads = backward(&work, &record, &grad, Trainable::TEXTURE_ONLY)?;
        check_frozen(&grads)?;
        adam_step(&mut work, &grads, &mut adam, &rates)?;
        if (options.eval_interval > 0 && it % options.eval_interval == 0) || it == options.iterations {
            log(&MetricsRecord {
                phase: Phase::StyleText,
                iteration: it,
                loss_color: loss,
                loss_normal: 0.0,
                loss_alpha: 0.0,
                loss_total: loss,
                psnr: Some(psnr(&targets.color, &targets_rgb[index])?),
                primitives: work.len(),
            });
        }
    }
    work.edit.opacity = target_opacity;
    Ok(work)
}

#[cfg(test)]
mod tests;
