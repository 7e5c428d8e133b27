//! The three-phase fitting pipeline: geometry with spherical harmonics,
//! relightable shading, then recolorable textures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::CameraView;
use crate::dataset::{MultiViewDataset, View};
use crate::error::{Error, Result};
use crate::image::{psnr, Image};
use crate::math::{logit, Vec3};
use crate::render::backward::{backward, GradientBundle, Trainable};
use crate::render::sh::{coeff_count, color_from_dc};
use crate::render::{render_basic, render_with_record, RenderMode, RenderOptions, RenderTargets};
use crate::scene::{allocate_texels, Appearance, BasicSceneModel, SurfelPrimitive};
use crate::synthetic::random_quat;

use super::adam::{adam_step, exponential_decay, AdamState, LearningRates};
use super::config::TrainConfig;
use super::density::{density_control, DensityParams, DensityStats};
use super::loss::{composite_over, loss_bilateral, loss_normal_consistency, loss_photometric, loss_sparsity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Geometry,
    Shading,
    Texture,
    StyleImage,
    StyleText,
}

impl Phase {
    pub fn trainable(self) -> Trainable {
        match self {
            Phase::Geometry => Trainable { c_ind: false, shading: false, texture: false, palette: false, ..Trainable::ALL },
            Phase::Shading => Trainable { sh: false, texture: false, palette: false, ..Trainable::ALL },
            Phase::Texture => Trainable { texture: true, palette: true, ..Trainable::NONE },
            Phase::StyleImage | Phase::StyleText => Trainable::TEXTURE_ONLY,
        }
    }
}

/// Individual loss terms of one iteration, unweighted, plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub color: f64,
    pub normal: f64,
    pub alpha: f64,
    pub bilateral: f64,
    pub sparsity: f64,
    pub total: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub phase: Phase,
    /// Iteration within the phase, 1-based.
    pub iteration: usize,
    pub loss_color: f64,
    pub loss_normal: f64,
    pub loss_alpha: f64,
    pub loss_total: f64,
    /// Mean held-out PSNR (training views when nothing is held out); absent
    /// when there is no reference image.
    pub psnr: Option<f64>,
    pub primitives: usize,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

#[derive(Debug, Clone, Default)]
pub struct FitReport {
    pub metrics: Vec<MetricsRecord>,
    /// Weighted loss of every iteration, per phase.
    pub losses: Vec<(Phase, f64)>,
    /// Primitive count after every iteration.
    pub primitive_trace: Vec<usize>,
}

/// Fits a textured scene to a dataset.
pub fn fit(dataset: &MultiViewDataset, config: &TrainConfig) -> Result<BasicSceneModel> {
    Ok(fit_with_log(dataset, config, &mut |_| {})?.0)
}

/// [`fit`], calling `log` for every metrics record as it is produced.
pub fn fit_with_log(
    dataset: &MultiViewDataset,
    config: &TrainConfig,
    log: &mut dyn FnMut(&MetricsRecord),
) -> Result<(BasicSceneModel, FitReport)> {
    config.validate()?;
    dataset.validate()?;
    if dataset.views.len() < 2 || dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scene = random_init(dataset, config, &mut rng)?;
    let mut report = FitReport::default();
    let mut trainer = Trainer { dataset, config, rng, report: &mut report, log };

    if config.iterations_phase1 > 0 {
        trainer.run(&mut scene, Phase::Geometry, config.iterations_phase1)?;
    }
    if config.iterations_phase2 > 0 {
        to_relightable(&mut scene, dataset);
        trainer.run(&mut scene, Phase::Shading, config.iterations_phase2)?;
    }
    if config.iterations_texture > 0 {
        if scene.appearance == Appearance::SphericalHarmonics {
            to_relightable(&mut scene, dataset);
        }
        to_textured(&mut scene, dataset, config.texel_budget)?;
        trainer.run(&mut scene, Phase::Texture, config.iterations_texture)?;
    }
    Ok((scene, report))
}

/// Random surfels in the region every training camera sees.
pub fn random_init(dataset: &MultiViewDataset, config: &TrainConfig, rng: &mut impl Rng) -> Result<BasicSceneModel> {
    let cameras: Vec<&CameraView> = dataset.train_views().map(|v| &v.camera).collect();
    let (lo, hi) = shared_view_bounds(&cameras, dataset.camera_extent(), rng);
    let count = config.initial_primitives;
    let centers: Vec<Vec3> =
        (0..count).map(|_| Vec3::from_fn(|i, _| if hi[i] > lo[i] { rng.gen_range(lo[i]..hi[i]) } else { lo[i] })).collect();
    let spacing = mean_neighbour_distances(&centers, 3);
    let sh_len = coeff_count(config.sh_degree);
    let prims = centers
        .iter()
        .zip(&spacing)
        .map(|(mu, d)| {
            let s = d.max(1e-6).ln();
            SurfelPrimitive {
                mu: *mu,
                rot: random_quat(rng),
                log_scale: [s, s],
                opacity_logit: logit(config.initial_opacity),
                sh: vec![[0.0; 3]; sh_len],
                ..Default::default()
            }
        })
        .collect();
    let mut scene = BasicSceneModel::new(prims, Appearance::SphericalHarmonics);
    scene.sh_degree = Some(config.sh_degree);
    scene.t_total = config.texel_budget;
    Ok(scene)
}

/// Bounding box of pilot points that project inside every camera; falls back
/// to a box around the rig centroid when the frusta share nothing.
fn shared_view_bounds(cameras: &[&CameraView], extent: f64, rng: &mut impl Rng) -> (Vec3, Vec3) {
    let centroid = cameras.iter().map(|c| c.center()).sum::<Vec3>() / cameras.len().max(1) as f64;
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for _ in 0..8192 {
        let p = centroid + Vec3::from_fn(|_, _| rng.gen_range(-extent..extent));
        let seen = cameras.iter().all(|c| {
            let q = c.world_to_camera(&p);
            if q.z <= c.near {
                return false;
            }
            let [x, y] = c.project(&q);
            x >= 0.0 && y >= 0.0 && x < c.width as f64 && y < c.height as f64
        });
        if seen {
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    if lo.x.is_finite() {
        (lo, hi)
    } else {
        let r = Vec3::repeat(0.25 * extent);
        (centroid - r, centroid + r)
    }
}

/// Mean distance to the `k` nearest other points, via a uniform grid.
fn mean_neighbour_distances(points: &[Vec3], k: usize) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![1.0; n];
    }
    let lo = points.iter().fold(Vec3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = points.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let span = (hi - lo).map(|v| v.max(1e-9));
    let cell = (span.x * span.y * span.z / n as f64).cbrt().max(1e-9);
    let dims = span.map(|v| ((v / cell).floor() as usize + 1).min(1024));
    let key = |p: &Vec3| -> [usize; 3] {
        let c = (p - lo) / cell;
        [0, 1, 2].map(|i| (c[i].floor().max(0.0) as usize).min(dims[i] - 1))
    };
    let mut grid: std::collections::HashMap<[usize; 3], Vec<usize>> = std::collections::HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let k = k.min(n - 1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = key(p);
            let mut best: Vec<f64> = Vec::new();
            let mut ring = 0usize;
            loop {
                for dx in -(ring as i64)..=ring as i64 {
                    for dy in -(ring as i64)..=ring as i64 {
                        for dz in -(ring as i64)..=ring as i64 {
                            if dx.abs().max(dy.abs()).max(dz.abs()) as usize != ring {
                                continue;
                            }
                            let q = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                            if q.iter().zip(dims.iter()).any(|(&v, &d)| v < 0 || v >= d as i64) {
                                continue;
                            }
                            if let Some(list) = grid.get(&[q[0] as usize, q[1] as usize, q[2] as usize]) {
                                best.extend(list.iter().filter(|&&j| j != i).map(|&j| (points[j] - p).norm()));
                            }
                        }
                    }
                }
                best.sort_by(f64::total_cmp);
                best.truncate(k);
                // every point outside the searched rings is at least `ring * cell` away
                if best.len() == k && best[k - 1] <= ring as f64 * cell {
                    break;
                }
                if ring > dims.max() {
                    break;
                }
                ring += 1;
            }
            best.iter().sum::<f64>() / best.len().max(1) as f64
        })
        .collect()
}

/// Switches an SH scene to per-primitive base colors taken from the DC term,
/// with the ambient coefficient chosen so the first shaded render matches.
pub fn to_relightable(scene: &mut BasicSceneModel, dataset: &MultiViewDataset) {
    let k_a = if dataset.light.ambient > 0.0 { 1.0 / dataset.light.ambient } else { 1.0 };
    for p in &mut scene.primitives {
        let dc = p.sh.first().copied().unwrap_or([0.0; 3]);
        p.c_ind = color_from_dc(&dc).map(|v| v.max(0.0));
        p.sh.clear();
        p.k_a = k_a;
        p.k_d = 0.0;
        p.k_s = 0.0;
        p.beta = p.beta.max(1.0);
    }
    scene.sh_degree = None;
    scene.appearance = Appearance::Relightable;
}

/// Mean straight color of the training images, weighted by coverage.
pub fn mean_training_color(dataset: &MultiViewDataset) -> Vec3 {
    let mut sum = Vec3::zeros();
    let mut weight = 0.0;
    for v in dataset.train_views() {
        for px in v.image.data.chunks_exact(4) {
            sum += Vec3::new(px[0], px[1], px[2]) * px[3];
            weight += px[3];
        }
    }
    if weight > 0.0 {
        sum / weight
    } else {
        Vec3::repeat(0.5)
    }
}

/// Allocates textures, sets the palette to the mean training color and bakes
/// each primitive's base color into its texels as an offset from the palette.
pub fn to_textured(scene: &mut BasicSceneModel, dataset: &MultiViewDataset, texel_budget: u64) -> Result<()> {
    scene.t_total = texel_budget;
    allocate_texels(scene)?;
    scene.c_palette = mean_training_color(dataset);
    let palette = scene.c_palette;
    for p in &mut scene.primitives {
        let offset = p.c_ind - palette;
        if let Some(tex) = p.texture.as_mut() {
            for (k, t) in tex.texels.iter_mut().enumerate() {
                *t = offset[k % 3];
            }
        }
        p.c_ind = Vec3::zeros();
    }
    scene.appearance = Appearance::Textured;
    Ok(())
}

/// Loss of one rendered view for a phase and its gradient on the maps.
pub fn phase_loss(
    phase: Phase,
    targets: &RenderTargets,
    view: &View,
    background: &Vec3,
    config: &TrainConfig,
) -> Result<(LossTerms, RenderTargets)> {
    let (w, h) = (targets.width(), targets.height());
    let mut grad = RenderTargets::new(w, h);
    let photo = loss_photometric(targets, &view.image, background, config.lambda_ssim)?;
    let mut terms = LossTerms { color: photo.color, ..Default::default() };
    grad.color = photo.grad_color;
    if phase == Phase::Texture {
        let (sparsity, g) = loss_sparsity(&targets.c_tex);
        terms.sparsity = sparsity;
        grad.c_tex = scaled(g, config.lambda_sparsity);
        terms.total = terms.color + config.lambda_sparsity * sparsity;
        return Ok((terms, grad));
    }
    terms.alpha = photo.alpha;
    grad.alpha = scaled(photo.grad_alpha, config.lambda_alpha);
    if config.lambda_normal != 0.0 {
        let normal = loss_normal_consistency(targets, &view.camera);
        terms.normal = normal.value;
        add_scaled(&mut grad.alpha, &normal.grad_alpha, config.lambda_normal);
        grad.depth = scaled(normal.grad_depth, config.lambda_normal);
        grad.normal = scaled(normal.grad_normal, config.lambda_normal);
    }
    terms.total = terms.color + config.lambda_normal * terms.normal + config.lambda_alpha * terms.alpha;
    if phase == Phase::Shading && config.lambda_bilateral != 0.0 {
        let guide = composite_over(&view.image, background);
        let maps = [&targets.k_a, &targets.k_d, &targets.k_s, &targets.beta];
        let mut grads = Vec::with_capacity(4);
        for m in maps {
            let (v, g) = loss_bilateral(m, &guide)?;
            terms.bilateral += v;
            grads.push(scaled(g, config.lambda_bilateral));
        }
        let mut it = grads.into_iter();
        grad.k_a = it.next().expect("four maps");
        grad.k_d = it.next().expect("four maps");
        grad.k_s = it.next().expect("four maps");
        grad.beta = it.next().expect("four maps");
        terms.total += config.lambda_bilateral * terms.bilateral;
    }
    Ok((terms, grad))
}

fn scaled(mut img: Image, f: f64) -> Image {
    img.data.iter_mut().for_each(|v| *v *= f);
    img
}

fn add_scaled(dst: &mut Image, src: &Image, f: f64) {
    for (a, b) in dst.data.iter_mut().zip(&src.data) {
        *a += f * b;
    }
}

/// Mean PSNR of shaded renders against the views, composited over `background`.
pub fn evaluate_psnr<'a>(
    scene: &BasicSceneModel,
    views: impl Iterator<Item = &'a View>,
    dataset: &MultiViewDataset,
) -> Result<f64> {
    let options = RenderOptions { mode: RenderMode::Shaded, light: dataset.light.clone(), background: dataset.background };
    let mut total = 0.0;
    let mut count = 0usize;
    for v in views {
        let out = render_basic(scene, &v.camera, &options)?;
        total += psnr(&out.color, &composite_over(&v.image, &dataset.background))?;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Fails if any gradient outside the texture and palette is non-zero.
pub fn check_frozen(grads: &GradientBundle) -> Result<()> {
    for (i, g) in grads.primitives.iter().enumerate() {
        let moved = g.mu != Vec3::zeros()
            || g.rot != [0.0; 4]
            || g.log_scale != [0.0; 2]
            || g.opacity_logit != 0.0
            || g.c_ind != Vec3::zeros()
            || g.sh.iter().any(|c| *c != [0.0; 3])
            || g.k_a != 0.0
            || g.k_d != 0.0
            || g.k_s != 0.0
            || g.beta != 0.0;
        if moved {
            return Err(Error::Contract(format!("frozen attribute of primitive {i} received a gradient")));
        }
    }
    Ok(())
}

struct Trainer<'a, 'l> {
    dataset: &'a MultiViewDataset,
    config: &'a TrainConfig,
    rng: ChaCha8Rng,
    report: &'a mut FitReport,
    log: &'l mut dyn FnMut(&MetricsRecord),
}

impl Trainer<'_, '_> {
    fn rates(&self, phase: Phase, global_step: usize) -> LearningRates {
        let c = self.config;
        let extent = self.dataset.camera_extent();
        let decay_steps = c.iterations_phase1 + c.iterations_phase2;
        LearningRates {
            position: extent * exponential_decay(c.lr_position_init, c.lr_position_final, global_step, decay_steps),
            rotation: c.lr_rotation,
            scale: c.lr_scale,
            opacity: c.lr_opacity,
            color_ind: c.lr_sh_dc,
            sh_dc: c.lr_sh_dc,
            sh_rest: c.lr_sh_rest,
            shading: c.lr_shading,
            texture: if phase == Phase::Texture { c.lr_texture } else { 0.0 },
            palette: c.lr_palette,
        }
    }

    fn run(&mut self, scene: &mut BasicSceneModel, phase: Phase, iterations: usize) -> Result<()> {
        let c = self.config;
        let trainable = phase.trainable();
        let options = RenderOptions { mode: RenderMode::Shaded, light: self.dataset.light.clone(), background: self.dataset.background };
        let mut adam = AdamState::new(scene);
        let mut stats = DensityStats::new(scene.len());
        let density = DensityParams {
            grad_threshold: c.densify_grad_threshold,
            clone_max_scale: c.percent_dense * self.dataset.camera_extent(),
            prune_opacity: c.prune_opacity,
        };
        let offset = if phase == Phase::Shading { c.iterations_phase1 } else { 0 };
        let mut order: Vec<usize> = Vec::new();
        for it in 1..=iterations {
            if order.is_empty() {
                order = self.dataset.train.clone();
                order.shuffle(&mut self.rng);
            }
            let view = &self.dataset.views[order.pop().expect("non-empty train split")];
            let (targets, record) = render_with_record(scene, &view.camera, &options)?;
            let (terms, grad) = phase_loss(phase, &targets, view, &self.dataset.background, c)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{phase:?} phase, iteration {it}, view {}: loss terms {terms:?}",
                    view.name
                )));
            }
            let grads = backward(scene, &record, &grad, trainable)?;
            if phase == Phase::Texture {
                check_frozen(&grads)?;
            }
            let densifying = phase == Phase::Geometry && it <= c.densify_until;
            if densifying {
                stats.accumulate(&grads);
            }
            adam_step(scene, &grads, &mut adam, &self.rates(phase, offset + it))?;
            if densifying && it >= c.densify_from && c.densify_interval > 0 && it % c.densify_interval == 0 {
                let r = density_control(scene, &mut stats, &mut adam, &density, &mut self.rng);
                log::debug!("iteration {it}: cloned {}, split {}, pruned {}", r.cloned, r.split, r.pruned);
            }
            self.report.losses.push((phase, terms.total));
            self.report.primitive_trace.push(scene.len());
            if (c.eval_interval > 0 && it % c.eval_interval == 0) || it == iterations {
                self.emit(scene, phase, it, &terms)?;
            }
        }
        Ok(())
    }

    fn emit(&mut self, scene: &BasicSceneModel, phase: Phase, iteration: usize, terms: &LossTerms) -> Result<()> {
        let psnr = if self.dataset.test.is_empty() {
            evaluate_psnr(scene, self.dataset.train_views(), self.dataset)?
        } else {
            evaluate_psnr(scene, self.dataset.test_views(), self.dataset)?
        };
        let record = MetricsRecord {
            phase,
            iteration,
            loss_color: terms.color,
            loss_normal: terms.normal,
            loss_alpha: terms.alpha,
            loss_total: terms.total,
            psnr: Some(psnr),
            primitives: scene.len(),
        };
        (self.log)(&record);
        self.report.metrics.push(record);
        Ok(())
    }
}
