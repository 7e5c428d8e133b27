//! Forward rendering of textured, relightable surfels: ray-splat
//! intersection, Gaussian weighting, front-to-back compositing and shading.
//!
//! Primitives are sorted globally by the camera-space depth of their centers
//! (ties broken by scene and primitive index) and binned into 16x16 tiles by
//! the screen-space bounding box of their visible footprint.

pub mod backward;
pub mod reference;
pub mod sh;
pub mod shading;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{quat_to_matrix, sigmoid, Mat3, Vec3};
use crate::scene::{Appearance, BasicSceneModel, ComposedScene, LightConfig, SurfelPrimitive};
use shading::{blinn_phong_factors, BlinnPhongFactors, ShadingCoefficients};

pub const TILE_SIZE: usize = 16;
const SUB_BLOCK: usize = 4;
/// Contributions with `opacity * weight` below this are skipped.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;
/// Per-splat alpha ceiling; keeps transmittance strictly positive.
pub const MAX_ALPHA: f64 = 0.9999;
/// Compositing stops once transmittance drops below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Standard deviation (pixels) of the screen-space low-pass floor.
pub const LOW_PASS_SIGMA: f64 = 0.3;
/// Rays closer than this to the splat plane (cosine) miss the splat.
pub const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenderMode {
    /// Blinn-Phong shaded color (spherical-harmonic color before shading attributes exist).
    Shaded,
    /// Base color without lighting.
    FlatTexture,
    /// Camera-facing world-space normal.
    Normal,
    /// Camera-space depth of the intersection.
    Depth,
    /// Texture offset `c_tex` only.
    TextureOffset,
}

impl RenderMode {
    pub const ALL: [RenderMode; 5] = [
        RenderMode::Shaded,
        RenderMode::FlatTexture,
        RenderMode::Normal,
        RenderMode::Depth,
        RenderMode::TextureOffset,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub mode: RenderMode,
    pub light: LightConfig,
    pub background: Vec3,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { mode: RenderMode::Shaded, light: LightConfig::default(), background: Vec3::zeros() }
    }
}

impl RenderOptions {
    pub fn new(mode: RenderMode, light: LightConfig) -> Self {
        RenderOptions { mode, light, ..Default::default() }
    }
}

/// Per-pixel outputs of one render pass. Every map except `color` is the
/// compositing-weighted sum of per-surfel values (not normalized by alpha).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTargets {
    pub color: Image,
    pub alpha: Image,
    pub depth: Image,
    pub normal: Image,
    pub c_tex: Image,
    pub k_a: Image,
    pub k_d: Image,
    pub k_s: Image,
    pub beta: Image,
}

impl RenderTargets {
    pub fn new(width: usize, height: usize) -> Self {
        RenderTargets {
            color: Image::new(width, height, 3),
            alpha: Image::new(width, height, 1),
            depth: Image::new(width, height, 1),
            normal: Image::new(width, height, 3),
            c_tex: Image::new(width, height, 3),
            k_a: Image::new(width, height, 1),
            k_d: Image::new(width, height, 1),
            k_s: Image::new(width, height, 1),
            beta: Image::new(width, height, 1),
        }
    }

    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    /// Largest absolute difference over every map.
    pub fn max_abs_diff(&self, other: &RenderTargets) -> f64 {
        self.maps()
            .iter()
            .zip(other.maps().iter())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    pub fn maps(&self) -> [&Image; 9] {
        [
            &self.color, &self.alpha, &self.depth, &self.normal, &self.c_tex, &self.k_a, &self.k_d,
            &self.k_s, &self.beta,
        ]
    }

    /// Color and alpha as an RGBA image.
    pub fn rgba(&self) -> Image {
        let mut out = Image::new(self.width(), self.height(), 4);
        for (i, px) in out.data.chunks_exact_mut(4).enumerate() {
            px[..3].copy_from_slice(&self.color.data[i * 3..i * 3 + 3]);
            px[3] = self.alpha.data[i];
        }
        out
    }

    pub(crate) fn write_pixel(&mut self, index: usize, acc: &PixelAccum, background: &Vec3) {
        let c = acc.color + background * acc.transmittance;
        self.color.data[index * 3..index * 3 + 3].copy_from_slice(c.as_slice());
        self.alpha.data[index] = 1.0 - acc.transmittance;
        self.depth.data[index] = acc.depth;
        self.normal.data[index * 3..index * 3 + 3].copy_from_slice(acc.normal.as_slice());
        self.c_tex.data[index * 3..index * 3 + 3].copy_from_slice(acc.c_tex.as_slice());
        self.k_a.data[index] = acc.coeffs[0];
        self.k_d.data[index] = acc.coeffs[1];
        self.k_s.data[index] = acc.coeffs[2];
        self.beta.data[index] = acc.coeffs[3];
    }
}

/// View-dependent quantities of one surfel, computed once per render.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSplat {
    pub scene: usize,
    pub prim: usize,
    /// Center in camera space.
    pub m: Vec3,
    /// Camera-space tangent axes and un-oriented normal.
    pub a_hat: Vec3,
    pub b_hat: Vec3,
    pub n_hat: Vec3,
    /// `n_hat . m`, `a_hat . m`, `b_hat . m`.
    pub plane_offset: f64,
    pub tangent_offset: [f64; 2],
    pub s_u: f64,
    pub s_v: f64,
    /// `(1 / s_u, 1 / s_v)`.
    pub inv_scale: [f64; 2],
    pub opacity: f64,
    pub center_px: [f64; 2],
    /// +1 or -1: orientation applied to the rotation's third column.
    pub normal_sign: f64,
    pub normal: Vec3,
    pub light_dir: Vec3,
    pub appearance: Appearance,
    /// Base color of untextured surfels (SH color or `c_ind`).
    pub base_color: Vec3,
    /// Final per-splat color for untextured surfels in shaded mode.
    pub shaded_color: Vec3,
    pub factors: BlinnPhongFactors,
    pub specular_color: Vec3,
    pub palette: Vec3,
    pub coeffs: [f64; 4],
    pub t_size: f64,
    /// `(s_u / t_size, s_v / t_size)`: local coordinates to texel units.
    pub texel_scale: [f64; 2],
    /// `((U - 1) / 2, (V - 1) / 2)` when textured.
    pub tex_center: Option<[f64; 2]>,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]`.
    pub bbox: [i64; 4],
    /// Squared Gaussian radius beyond which `opacity * G` is surely below the cutoff.
    pub rho_limit: f64,
}

impl PreparedSplat {
    pub fn primitive<'a>(&self, scenes: &[&'a BasicSceneModel]) -> &'a SurfelPrimitive {
        &scenes[self.scene].primitives[self.prim]
    }
}

/// Where one splat was hit by one pixel ray.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SplatHit {
    pub splat: u32,
    pub g: f64,
    pub alpha: f64,
    /// `opacity * g` exceeded `MAX_ALPHA` and was clamped.
    pub clamped: bool,
    pub u: f64,
    pub v: f64,
    /// The screen-space low-pass term won over the surfel Gaussian.
    pub low_pass: bool,
    pub depth: f64,
    pub lambda: f64,
    /// Transmittance before this splat.
    pub t_before: f64,
}

/// Per-splat values composited at one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HitFeatures {
    pub color: Vec3,
    pub c_tex: Vec3,
    pub depth: f64,
    pub normal: Vec3,
    pub coeffs: [f64; 4],
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelAccum {
    pub color: Vec3,
    pub depth: f64,
    pub normal: Vec3,
    pub c_tex: Vec3,
    pub coeffs: [f64; 4],
    pub transmittance: f64,
}

impl PixelAccum {
    pub fn new() -> Self {
        PixelAccum {
            color: Vec3::zeros(),
            depth: 0.0,
            normal: Vec3::zeros(),
            c_tex: Vec3::zeros(),
            coeffs: [0.0; 4],
            transmittance: 1.0,
        }
    }

    pub fn add(&mut self, w: f64, f: &HitFeatures) {
        self.color += f.color * w;
        self.depth += f.depth * w;
        self.normal += f.normal * w;
        self.c_tex += f.c_tex * w;
        for k in 0..4 {
            self.coeffs[k] += f.coeffs[k] * w;
        }
    }
}

/// Effective light direction for a surfel, honoring edit overrides and headlights.
pub(crate) fn resolve_light_dir(scene: &BasicSceneModel, light: &LightConfig, to_camera: &Vec3) -> Vec3 {
    if let Some(d) = scene.edit.light_dir {
        return Vec3::from(d).normalize();
    }
    if light.headlight {
        *to_camera
    } else {
        Vec3::from(light.direction).normalize()
    }
}

pub(crate) fn effective_coeffs(scene: &BasicSceneModel, p: &SurfelPrimitive) -> ShadingCoefficients {
    ShadingCoefficients {
        k_a: p.k_a * scene.edit.k_a,
        k_d: p.k_d * scene.edit.k_d,
        k_s: p.k_s * scene.edit.k_s,
        beta: p.beta * scene.edit.beta,
    }
}

pub(crate) fn effective_opacity(scene: &BasicSceneModel, p: &SurfelPrimitive) -> f64 {
    (sigmoid(p.opacity_logit) * scene.edit.opacity).clamp(0.0, 1.0)
}

/// Builds the per-view splat list, sorted front to back. Surfels behind the
/// near plane or too transparent to ever pass the alpha cutoff are dropped.
pub(crate) fn prepare_splats(
    scenes: &[&BasicSceneModel],
    camera: &CameraView,
    light: &LightConfig,
) -> Vec<PreparedSplat> {
    let r_w2c = camera.rotation_w2c();
    let cam_center = camera.center();
    let mut out = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        for (pi, p) in scene.primitives.iter().enumerate() {
            if let Some(s) = prepare_one(scene, si, pi, p, camera, &r_w2c, &cam_center, light) {
                out.push(s);
            }
        }
    }
    let mut order: Vec<(f64, usize, usize, usize)> =
        out.iter().enumerate().map(|(k, s)| (s.m.z, s.scene, s.prim, k)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut slots: Vec<Option<PreparedSplat>> = out.into_iter().map(Some).collect();
    order.iter().map(|o| slots[o.3].take().expect("each index appears once")).collect()
}

#[allow(clippy::too_many_arguments)]
fn prepare_one(
    scene: &BasicSceneModel,
    si: usize,
    pi: usize,
    p: &SurfelPrimitive,
    camera: &CameraView,
    r_w2c: &Mat3,
    cam_center: &Vec3,
    light: &LightConfig,
) -> Option<PreparedSplat> {
    let opacity = effective_opacity(scene, p);
    if opacity < ALPHA_CUTOFF {
        return None;
    }
    let m = r_w2c * (p.mu - cam_center);
    if !(m.z > camera.near) {
        return None;
    }
    let q = crate::math::normalize_quat(&p.rot).ok()?;
    let rot = quat_to_matrix(&q);
    let t_u: Vec3 = rot.column(0).into();
    let t_v: Vec3 = rot.column(1).into();
    let n0: Vec3 = rot.column(2).into();
    let a_hat = r_w2c * t_u;
    let b_hat = r_w2c * t_v;
    let n_hat = r_w2c * n0;
    let (s_u, s_v) = (p.scale_u(), p.scale_v());

    let offset = p.mu - cam_center;
    let view_dir = offset.normalize();
    let normal_sign = if n0.dot(&view_dir) > 0.0 { -1.0 } else { 1.0 };
    let normal = n0 * normal_sign;
    let to_camera = -view_dir;
    let light_dir = resolve_light_dir(scene, light, &to_camera);

    let sc = effective_coeffs(scene, p);
    let factors = blinn_phong_factors(&sc, &normal, &light_dir, light, &to_camera);
    let specular_color = Vec3::from(light.specular_color);
    let base_color = match scene.appearance {
        Appearance::SphericalHarmonics => sh::eval_sh(&p.sh, &view_dir),
        _ => p.c_ind,
    };
    let shaded_color = match scene.appearance {
        Appearance::SphericalHarmonics => base_color,
        _ => (base_color * factors.ambient_diffuse + specular_color * factors.specular).map(|v| v.max(0.0)),
    };
    let tex_center = match (&p.texture, scene.appearance.is_textured()) {
        (Some(t), true) => Some([(t.u_dim as f64 - 1.0) / 2.0, (t.v_dim as f64 - 1.0) / 2.0]),
        _ => None,
    };
    let center_px = camera.project(&m);
    let bbox = footprint_bbox(camera, &m, &(a_hat * s_u), &(b_hat * s_v), opacity, center_px)?;
    Some(PreparedSplat {
        scene: si,
        prim: pi,
        m,
        a_hat,
        b_hat,
        n_hat,
        plane_offset: n_hat.dot(&m),
        tangent_offset: [a_hat.dot(&m), b_hat.dot(&m)],
        s_u,
        s_v,
        inv_scale: [1.0 / s_u, 1.0 / s_v],
        opacity,
        center_px,
        normal_sign,
        normal,
        light_dir,
        appearance: scene.appearance,
        base_color,
        shaded_color,
        factors,
        specular_color,
        palette: scene.effective_palette(),
        coeffs: [sc.k_a, sc.k_d, sc.k_s, sc.beta],
        t_size: scene.t_size,
        texel_scale: [s_u / scene.t_size, s_v / scene.t_size],
        tex_center,
        bbox,
        rho_limit: 2.0 * (opacity / ALPHA_CUTOFF).ln() * (1.0 + 1e-9) + 1e-9,
    })
}

/// Conservative pixel bounds of the region where `opacity * G >= cutoff`,
/// covering both the projected surfel disk and the low-pass footprint.
fn footprint_bbox(
    camera: &CameraView,
    m: &Vec3,
    a: &Vec3,
    b: &Vec3,
    opacity: f64,
    center_px: [f64; 2],
) -> Option<[i64; 4]> {
    let ratio = opacity / ALPHA_CUTOFF;
    if ratio < 1.0 {
        return None;
    }
    // radius (in units of sigma) beyond which the weight is below the cutoff
    let r = (2.0 * ratio.ln()).sqrt() * 1.001 + 1e-6;
    let (w, h) = (camera.width as f64, camera.height as f64);
    let full = [0.0, 0.0, w, h];

    let r2 = r * r;
    let t0 = [camera.fx * a.x + camera.cx * a.z, camera.fx * b.x + camera.cx * b.z, camera.fx * m.x + camera.cx * m.z];
    let t1 = [camera.fy * a.y + camera.cy * a.z, camera.fy * b.y + camera.cy * b.z, camera.fy * m.y + camera.cy * m.z];
    let t2 = [a.z, b.z, m.z];
    let qf = |p: &[f64; 3], q: &[f64; 3]| r2 * (p[0] * q[0] + p[1] * q[1]) - p[2] * q[2];
    let a22 = qf(&t2, &t2);
    let disk = if a22 < -1e-12 && m.z > 0.0 {
        let axis = |t: &[f64; 3]| -> Option<(f64, f64)> {
            let center = qf(t, &t2) / a22;
            let ext2 = center * center - qf(t, t) / a22;
            if !ext2.is_finite() {
                return None;
            }
            let ext = ext2.max(0.0).sqrt();
            Some((center - ext, center + ext))
        };
        match (axis(&t0), axis(&t1)) {
            (Some((x0, x1)), Some((y0, y1))) => [x0, y0, x1, y1],
            _ => full,
        }
    } else {
        full
    };
    let lp = r * LOW_PASS_SIGMA;
    let bounds = [
        disk[0].min(center_px[0] - lp),
        disk[1].min(center_px[1] - lp),
        disk[2].max(center_px[0] + lp),
        disk[3].max(center_px[1] + lp),
    ];
    // pixel i has its center at i + 0.5; keep one pixel of margin
    let x0 = ((bounds[0] - 0.5).floor() as i64 - 1).max(0);
    let y0 = ((bounds[1] - 0.5).floor() as i64 - 1).max(0);
    let x1 = ((bounds[2] - 0.5).ceil() as i64 + 1).min(camera.width as i64 - 1);
    let y1 = ((bounds[3] - 0.5).ceil() as i64 + 1).min(camera.height as i64 - 1);
    if !bounds.iter().all(|v| v.is_finite()) {
        return Some([0, 0, camera.width as i64 - 1, camera.height as i64 - 1]);
    }
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some([x0, y0, x1, y1])
}

/// Ray-splat intersection and Gaussian weight at a pixel center.
/// `ray` is the camera-space direction with unit z.
#[inline]
fn intersect(
    s: &PreparedSplat,
    index: u32,
    ray: &Vec3,
    parallel_eps: f64,
    px: f64,
    py: f64,
    near: f64,
) -> Option<SplatHit> {
    let dx = px - s.center_px[0];
    let dy = py - s.center_px[1];
    let rho2 = (dx * dx + dy * dy) * (1.0 / (LOW_PASS_SIGMA * LOW_PASS_SIGMA));
    let denom = s.n_hat.dot(ray);
    if denom.abs() <= parallel_eps {
        return None;
    }
    if rho2 > s.rho_limit {
        // reject without dividing: (u, v) * denom = offset * (ray . axis) - denom * (m . axis)
        let du = (s.plane_offset * s.a_hat.dot(ray) - denom * s.tangent_offset[0]) * s.inv_scale[0];
        let dv = (s.plane_offset * s.b_hat.dot(ray) - denom * s.tangent_offset[1]) * s.inv_scale[1];
        if du * du + dv * dv > s.rho_limit * (1.0 + 1e-6) * denom * denom {
            return None;
        }
    }
    let lambda = s.plane_offset / denom;
    let (mut u, mut v, mut rho3) = (0.0, 0.0, f64::INFINITY);
    if lambda > near {
        let q = ray * lambda - s.m;
        u = q.dot(&s.a_hat) * s.inv_scale[0];
        v = q.dot(&s.b_hat) * s.inv_scale[1];
        rho3 = u * u + v * v;
    }
    let low_pass = rho2 < rho3;
    let rho = if low_pass { rho2 } else { rho3 };
    if rho > s.rho_limit {
        return None;
    }
    let g = (-0.5 * rho).exp();
    let raw = s.opacity * g;
    if !(raw >= ALPHA_CUTOFF) {
        return None;
    }
    let clamped = raw > MAX_ALPHA;
    Some(SplatHit {
        splat: index,
        g,
        alpha: if clamped { MAX_ALPHA } else { raw },
        clamped,
        u: if low_pass { 0.0 } else { u },
        v: if low_pass { 0.0 } else { v },
        low_pass,
        depth: if low_pass { s.m.z } else { lambda },
        lambda,
        t_before: 1.0,
    })
}

/// Texture coordinates of a hit, if the splat is textured.
#[inline]
pub(crate) fn hit_texel_coords(s: &PreparedSplat, hit: &SplatHit) -> Option<(f64, f64)> {
    let c = s.tex_center?;
    Some((hit.u * s.texel_scale[0] + c[0], hit.v * s.texel_scale[1] + c[1]))
}

/// Per-splat values at a hit for the given mode.
#[inline]
pub(crate) fn hit_features(
    s: &PreparedSplat,
    hit: &SplatHit,
    prim: &SurfelPrimitive,
    mode: RenderMode,
) -> HitFeatures {
    let c_tex = match (hit_texel_coords(s, hit), prim.texture.as_ref()) {
        (Some((tu, tv)), Some(tex)) => tex.sample(tu, tv),
        _ => Vec3::zeros(),
    };
    let c_base = match s.appearance {
        Appearance::Textured => s.palette + c_tex,
        Appearance::Stylized => c_tex,
        _ => s.base_color,
    };
    let color = match mode {
        RenderMode::Shaded => {
            if s.appearance.is_textured() {
                (c_base * s.factors.ambient_diffuse + s.specular_color * s.factors.specular).map(|v| v.max(0.0))
            } else {
                s.shaded_color
            }
        }
        RenderMode::FlatTexture => c_base,
        RenderMode::Normal => s.normal,
        RenderMode::Depth => Vec3::repeat(hit.depth),
        RenderMode::TextureOffset => c_tex,
    };
    HitFeatures { color, c_tex, depth: hit.depth, normal: s.normal, coeffs: s.coeffs }
}

/// Hits of one tile, stored for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct TileRecord {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    /// `hits[pixel_start[k]..pixel_start[k + 1]]` belong to the k-th pixel of the tile.
    pub pixel_start: Vec<u32>,
    pub hits: Vec<SplatHit>,
    pub final_t: Vec<f64>,
}

/// Intermediates of a forward pass, consumed by [`backward::backward`].
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    pub(crate) width: usize,
    pub(crate) height: usize,
    pub(crate) splats: Vec<PreparedSplat>,
    pub(crate) tiles: Vec<TileRecord>,
    pub(crate) mode: RenderMode,
    pub(crate) background: Vec3,
    pub(crate) primitive_count: usize,
    pub(crate) camera: CameraView,
    pub(crate) light: LightConfig,
}

impl ForwardRecord {
    pub fn mode(&self) -> RenderMode {
        self.mode
    }

    /// Number of (pixel, splat) contributions recorded.
    pub fn hit_count(&self) -> usize {
        self.tiles.iter().map(|t| t.hits.len()).sum()
    }
}

fn bin_tiles(splats: &[PreparedSplat], width: usize, height: usize) -> (usize, usize, Vec<Vec<u32>>) {
    let tx = width.div_ceil(TILE_SIZE);
    let ty = height.div_ceil(TILE_SIZE);
    let mut bins = vec![Vec::new(); tx * ty];
    for (i, s) in splats.iter().enumerate() {
        let [x0, y0, x1, y1] = s.bbox;
        let (tx0, tx1) = (x0 as usize / TILE_SIZE, x1 as usize / TILE_SIZE);
        let (ty0, ty1) = (y0 as usize / TILE_SIZE, y1 as usize / TILE_SIZE);
        for j in ty0..=ty1 {
            for k in tx0..=tx1 {
                bins[j * tx + k].push(i as u32);
            }
        }
    }
    (tx, ty, bins)
}

struct TileOutput {
    accum: Vec<PixelAccum>,
    record: Option<TileRecord>,
}

#[allow(clippy::too_many_arguments)]
fn render_tile(
    scenes: &[&BasicSceneModel],
    splats: &[PreparedSplat],
    bin: &[u32],
    camera: &CameraView,
    mode: RenderMode,
    bounds: (usize, usize, usize, usize),
    record: bool,
) -> TileOutput {
    let (x0, y0, x1, y1) = bounds;
    let n = (x1 - x0) * (y1 - y0);
    let mut accum = Vec::with_capacity(n);
    let mut rec = record.then(|| TileRecord {
        x0,
        y0,
        x1,
        pixel_start: Vec::with_capacity(n + 1),
        hits: Vec::new(),
        final_t: Vec::with_capacity(n),
    });
    // candidates per SUB_BLOCK x SUB_BLOCK block of the tile, in bin order
    let blocks_x = (x1 - x0).div_ceil(SUB_BLOCK);
    let mut blocks: Vec<Vec<(u32, [i32; 4])>> = vec![Vec::new(); blocks_x * (y1 - y0).div_ceil(SUB_BLOCK)];
    for &i in bin {
        let [bx0, by0, bx1, by1] = splats[i as usize].bbox;
        let kx0 = ((bx0.max(x0 as i64) as usize) - x0) / SUB_BLOCK;
        let kx1 = ((bx1.min(x1 as i64 - 1) as usize) - x0) / SUB_BLOCK;
        let ky0 = ((by0.max(y0 as i64) as usize) - y0) / SUB_BLOCK;
        let ky1 = ((by1.min(y1 as i64 - 1) as usize) - y0) / SUB_BLOCK;
        let packed = [bx0 as i32, by0 as i32, bx1 as i32, by1 as i32];
        for ky in ky0..=ky1 {
            for kx in kx0..=kx1 {
                blocks[ky * blocks_x + kx].push((i, packed));
            }
        }
    }
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let ray = camera.ray_dir(px, py);
            let parallel_eps = PARALLEL_EPS * ray.norm();
            let mut acc = PixelAccum::new();
            if let Some(r) = rec.as_mut() {
                r.pixel_start.push(r.hits.len() as u32);
            }
            let (xi, yi) = (x as i32, y as i32);
            let block = &blocks[(y - y0) / SUB_BLOCK * blocks_x + (x - x0) / SUB_BLOCK];
            for &(i, [bx0, by0, bx1, by1]) in block {
                if xi < bx0 || xi > bx1 || yi < by0 || yi > by1 {
                    continue;
                }
                let s = &splats[i as usize];
                let Some(mut hit) = intersect(s, i, &ray, parallel_eps, px, py, camera.near) else {
                    continue;
                };
                let f = hit_features(s, &hit, s.primitive(scenes), mode);
                acc.add(hit.alpha * acc.transmittance, &f);
                hit.t_before = acc.transmittance;
                acc.transmittance *= 1.0 - hit.alpha;
                if let Some(r) = rec.as_mut() {
                    r.hits.push(hit);
                }
                if acc.transmittance < MIN_TRANSMITTANCE {
                    break;
                }
            }
            if let Some(r) = rec.as_mut() {
                r.final_t.push(acc.transmittance);
            }
            accum.push(acc);
        }
    }
    if let Some(r) = rec.as_mut() {
        r.pixel_start.push(r.hits.len() as u32);
    }
    TileOutput { accum, record: rec }
}

pub(crate) fn render_scenes(
    scenes: &[&BasicSceneModel],
    camera: &CameraView,
    options: &RenderOptions,
    record: bool,
) -> Result<(RenderTargets, Option<ForwardRecord>)> {
    camera.validate()?;
    let (width, height) = (camera.width, camera.height);
    let splats = prepare_splats(scenes, camera, &options.light);
    let (tx, ty, bins) = bin_tiles(&splats, width, height);
    let outputs: Vec<TileOutput> = (0..tx * ty)
        .into_par_iter()
        .map(|t| {
            let (cx, cy) = (t % tx, t / tx);
            let bounds = (
                cx * TILE_SIZE,
                cy * TILE_SIZE,
                ((cx + 1) * TILE_SIZE).min(width),
                ((cy + 1) * TILE_SIZE).min(height),
            );
            render_tile(scenes, &splats, &bins[t], camera, options.mode, bounds, record)
        })
        .collect();
    let mut targets = RenderTargets::new(width, height);
    let mut tiles = Vec::new();
    for (t, out) in outputs.into_iter().enumerate() {
        let (cx, cy) = (t % tx, t / tx);
        let (x0, y0) = (cx * TILE_SIZE, cy * TILE_SIZE);
        let x1 = ((cx + 1) * TILE_SIZE).min(width);
        let mut k = 0;
        for acc in &out.accum {
            let (x, y) = (x0 + k % (x1 - x0), y0 + k / (x1 - x0));
            targets.write_pixel(y * width + x, acc, &options.background);
            k += 1;
        }
        if let Some(r) = out.record {
            tiles.push(r);
        }
    }
    let record = record.then(|| ForwardRecord {
        width,
        height,
        splats,
        tiles,
        mode: options.mode,
        background: options.background,
        primitive_count: scenes.iter().map(|s| s.len()).sum(),
        camera: camera.clone(),
        light: options.light.clone(),
    });
    Ok((targets, record))
}

/// Renders every visible scene of a composition.
pub fn render(scene: &ComposedScene, camera: &CameraView, options: &RenderOptions) -> Result<RenderTargets> {
    let scenes = scene.visible_scenes();
    Ok(render_scenes(&scenes, camera, options, false)?.0)
}

/// Renders a single basic scene.
pub fn render_basic(scene: &BasicSceneModel, camera: &CameraView, options: &RenderOptions) -> Result<RenderTargets> {
    Ok(render_scenes(&[scene], camera, options, false)?.0)
}

/// Renders a single basic scene and keeps the intermediates needed for gradients.
pub fn render_with_record(
    scene: &BasicSceneModel,
    camera: &CameraView,
    options: &RenderOptions,
) -> Result<(RenderTargets, ForwardRecord)> {
    let (targets, record) = render_scenes(&[scene], camera, options, true)?;
    let record = record.ok_or_else(|| Error::Contract("forward record was not produced".into()))?;
    Ok((targets, record))
}

/// Splat weight for local surfel coordinates: `exp(-(u^2 + v^2) / 2)`,
/// floored by the screen-space low-pass Gaussian when a pixel offset from the
/// projected center is given.
pub fn splat_weight(u: f64, v: f64, screen_offset: Option<[f64; 2]>) -> f64 {
    let g = (-0.5 * (u * u + v * v)).exp();
    match screen_offset {
        Some([dx, dy]) => g.max((-0.5 * (dx * dx + dy * dy) / (LOW_PASS_SIGMA * LOW_PASS_SIGMA)).exp()),
        None => g,
    }
}

/// Whether a contribution survives the `1/255` alpha cutoff.
pub fn passes_cutoff(opacity: f64, weight: f64) -> bool {
    opacity * weight >= ALPHA_CUTOFF
}

/// Intersection of one pixel ray with one primitive of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySplatHit {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    /// Intersection point relative to `mu`, world space.
    pub p_local: Vec3,
}

/// Solves `x = P H (u, v, 1, 1)^T` for the pixel center `(px, py)`.
/// Returns `None` when the ray is parallel to the surfel plane.
pub fn ray_splat_intersect(prim: &SurfelPrimitive, camera: &CameraView, px: f64, py: f64) -> Option<RaySplatHit> {
    let r_w2c = camera.rotation_w2c();
    let m = r_w2c * (prim.mu - camera.center());
    let (t_u, t_v, n0) = prim.axes();
    let (a_hat, b_hat, n_hat) = (r_w2c * t_u, r_w2c * t_v, r_w2c * n0);
    let ray = camera.ray_dir(px, py);
    let denom = n_hat.dot(&ray);
    if denom.abs() <= PARALLEL_EPS * ray.norm() {
        return None;
    }
    let lambda = n_hat.dot(&m) / denom;
    let q = ray * lambda - m;
    let (s_u, s_v) = (prim.scale_u(), prim.scale_v());
    let u = q.dot(&a_hat) / s_u;
    let v = q.dot(&b_hat) / s_v;
    Some(RaySplatHit { u, v, depth: lambda, p_local: t_u * (u * s_u) + t_v * (v * s_v) })
}

#[cfg(test)]
mod tests;
