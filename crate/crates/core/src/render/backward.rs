//! Reverse-mode gradients of the forward pass.
//!
//! Pixel-level gradients arrive in a [`RenderTargets`] with the same shape as
//! the forward outputs. They are pulled back through compositing per tile,
//! accumulated per splat, reduced in a fixed tile order and finally chained
//! through shading, spherical harmonics, texture sampling and the surfel
//! parameterization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{normalize_quat, normalize_quat_vjp, normalize_vjp, quat_to_matrix_vjp, sigmoid, Mat3, Quat, Vec3};
use crate::render::sh::{sh_basis_with_grad, SH_DC_OFFSET};
use crate::scene::{Appearance, BasicSceneModel, BilinearTaps, MIN_SCALE};

use super::{hit_texel_coords, ForwardRecord, PreparedSplat, RenderMode, RenderTargets, SplatHit, TileRecord, LOW_PASS_SIGMA};

/// Groups of parameters that can be optimized. Frozen groups get exactly zero gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub position: bool,
    pub rotation: bool,
    pub scale: bool,
    pub opacity: bool,
    pub sh: bool,
    pub c_ind: bool,
    pub shading: bool,
    pub texture: bool,
    pub palette: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        position: true,
        rotation: true,
        scale: true,
        opacity: true,
        sh: true,
        c_ind: true,
        shading: true,
        texture: true,
        palette: true,
    };
    pub const NONE: Trainable = Trainable {
        position: false,
        rotation: false,
        scale: false,
        opacity: false,
        sh: false,
        c_ind: false,
        shading: false,
        texture: false,
        palette: false,
    };

    /// Texels only; geometry, shading and palette frozen.
    pub const TEXTURE_ONLY: Trainable = Trainable { texture: true, ..Trainable::NONE };

    pub fn geometry(self) -> bool {
        self.position || self.rotation || self.scale || self.opacity
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimitiveGrad {
    pub mu: Vec3,
    pub rot: Quat,
    pub log_scale: [f64; 2],
    pub opacity_logit: f64,
    pub c_ind: Vec3,
    pub sh: Vec<[f64; 3]>,
    pub k_a: f64,
    pub k_d: f64,
    pub k_s: f64,
    pub beta: f64,
    pub texels: Vec<f64>,
}

impl PrimitiveGrad {
    fn zeros_like(p: &crate::scene::SurfelPrimitive) -> Self {
        PrimitiveGrad {
            sh: vec![[0.0; 3]; p.sh.len()],
            texels: p.texture.as_ref().map(|t| vec![0.0; t.texels.len()]).unwrap_or_default(),
            ..Default::default()
        }
    }

    /// Every scalar in a fixed order (useful for norms and comparisons).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(20 + self.sh.len() * 3 + self.texels.len());
        v.extend_from_slice(self.mu.as_slice());
        v.extend_from_slice(&self.rot);
        v.extend_from_slice(&self.log_scale);
        v.push(self.opacity_logit);
        v.extend_from_slice(self.c_ind.as_slice());
        v.extend(self.sh.iter().flatten());
        v.extend_from_slice(&[self.k_a, self.k_d, self.k_s, self.beta]);
        v.extend_from_slice(&self.texels);
        v
    }

    pub fn scale(&mut self, f: f64) {
        self.mu *= f;
        self.rot = self.rot.map(|v| v * f);
        self.log_scale = self.log_scale.map(|v| v * f);
        self.opacity_logit *= f;
        self.c_ind *= f;
        for c in &mut self.sh {
            *c = c.map(|v| v * f);
        }
        self.k_a *= f;
        self.k_d *= f;
        self.k_s *= f;
        self.beta *= f;
        for t in &mut self.texels {
            *t *= f;
        }
    }

    pub fn add(&mut self, o: &PrimitiveGrad) {
        self.mu += o.mu;
        for i in 0..4 {
            self.rot[i] += o.rot[i];
        }
        self.log_scale[0] += o.log_scale[0];
        self.log_scale[1] += o.log_scale[1];
        self.opacity_logit += o.opacity_logit;
        self.c_ind += o.c_ind;
        for (a, b) in self.sh.iter_mut().zip(&o.sh) {
            for c in 0..3 {
                a[c] += b[c];
            }
        }
        self.k_a += o.k_a;
        self.k_d += o.k_d;
        self.k_s += o.k_s;
        self.beta += o.beta;
        for (a, b) in self.texels.iter_mut().zip(&o.texels) {
            *a += b;
        }
    }
}

/// Gradients for every optimizable attribute of one basic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub primitives: Vec<PrimitiveGrad>,
    pub palette: Vec3,
    /// Per-primitive norm of the screen-space (NDC) positional gradient.
    pub screen_grad: Vec<f64>,
    /// Whether the primitive contributed to any pixel.
    pub visible: Vec<bool>,
}

impl GradientBundle {
    pub fn zeros_like(scene: &BasicSceneModel) -> Self {
        GradientBundle {
            primitives: scene.primitives.iter().map(PrimitiveGrad::zeros_like).collect(),
            palette: Vec3::zeros(),
            screen_grad: vec![0.0; scene.len()],
            visible: vec![false; scene.len()],
        }
    }

    pub fn add(&mut self, other: &GradientBundle) {
        for (a, b) in self.primitives.iter_mut().zip(&other.primitives) {
            a.add(b);
        }
        self.palette += other.palette;
        for (a, b) in self.screen_grad.iter_mut().zip(&other.screen_grad) {
            *a += b;
        }
        for (a, b) in self.visible.iter_mut().zip(&other.visible) {
            *a |= b;
        }
    }

    pub fn scale(&mut self, f: f64) {
        for p in &mut self.primitives {
            p.scale(f);
        }
        self.palette *= f;
    }

    pub fn max_abs(&self) -> f64 {
        self.primitives
            .iter()
            .flat_map(|p| p.flatten())
            .chain(self.palette.iter().copied())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Splat-level partial gradients in camera space.
#[derive(Debug, Clone, Default)]
struct SplatGrad {
    m: Vec3,
    a_hat: Vec3,
    b_hat: Vec3,
    n_hat: Vec3,
    s_u: f64,
    s_v: f64,
    opacity: f64,
    center: [f64; 2],
    /// Gradient on the per-splat constant color (shaded or base, by mode).
    color_const: Vec3,
    ambient_diffuse: f64,
    specular: f64,
    /// Gradient on the camera-facing world normal.
    normal: Vec3,
    coeffs: [f64; 4],
    palette: Vec3,
    touched: bool,
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        self.m += o.m;
        self.a_hat += o.a_hat;
        self.b_hat += o.b_hat;
        self.n_hat += o.n_hat;
        self.s_u += o.s_u;
        self.s_v += o.s_v;
        self.opacity += o.opacity;
        self.center[0] += o.center[0];
        self.center[1] += o.center[1];
        self.color_const += o.color_const;
        self.ambient_diffuse += o.ambient_diffuse;
        self.specular += o.specular;
        self.normal += o.normal;
        for k in 0..4 {
            self.coeffs[k] += o.coeffs[k];
        }
        self.palette += o.palette;
        self.touched |= o.touched;
    }
}

struct TileGrads {
    /// `(splat index, partials)` in ascending splat order.
    splats: Vec<(u32, SplatGrad)>,
    /// `(splat index, texel index, rgb gradient)`.
    texels: Vec<(u32, u32, [f64; 3])>,
}

/// Gradients of a scalar loss given its gradients on the render targets.
///
/// `record` must come from [`super::render_with_record`] on the same scene.
pub fn backward(
    scene: &BasicSceneModel,
    record: &ForwardRecord,
    grad: &RenderTargets,
    trainable: Trainable,
) -> Result<GradientBundle> {
    if record.primitive_count != scene.len() {
        return Err(Error::Contract(format!(
            "forward record covers {} primitives, scene has {}",
            record.primitive_count,
            scene.len()
        )));
    }
    if grad.width() != record.width || grad.height() != record.height {
        return Err(Error::Contract(format!(
            "gradient maps are {}x{}, forward pass was {}x{}",
            grad.width(),
            grad.height(),
            record.width,
            record.height
        )));
    }
    if record.splats.iter().any(|s| s.scene != 0 || s.prim >= scene.len()) {
        return Err(Error::Contract("forward record does not belong to this scene".into()));
    }
    for s in &record.splats {
        let p = &scene.primitives[s.prim];
        let tex_ok = match (s.tex_center, &p.texture) {
            (Some(c), Some(t)) => c == [(t.u_dim as f64 - 1.0) / 2.0, (t.v_dim as f64 - 1.0) / 2.0],
            (None, _) => true,
            _ => false,
        };
        if !tex_ok {
            return Err(Error::Contract("texture layout changed since the forward pass".into()));
        }
    }

    let scenes = [scene];
    let partials: Vec<TileGrads> =
        record.tiles.par_iter().map(|t| tile_backward(&scenes, record, t, grad)).collect();

    let mut splat_grads = vec![SplatGrad::default(); record.splats.len()];
    let mut bundle = GradientBundle::zeros_like(scene);
    for tile in &partials {
        for (i, g) in &tile.splats {
            splat_grads[*i as usize].add(g);
        }
        if trainable.texture {
            for (i, t, g) in &tile.texels {
                let prim = record.splats[*i as usize].prim;
                let dst = &mut bundle.primitives[prim].texels[*t as usize * 3..*t as usize * 3 + 3];
                for c in 0..3 {
                    dst[c] += g[c];
                }
            }
        }
    }
    for (s, g) in record.splats.iter().zip(&splat_grads) {
        if !g.touched {
            continue;
        }
        chain_splat(scene, record, s, g, trainable, &mut bundle);
    }
    Ok(bundle)
}

fn tile_backward(scenes: &[&BasicSceneModel], record: &ForwardRecord, tile: &TileRecord, grad: &RenderTargets) -> TileGrads {
    let mut local: Vec<(u32, SplatGrad)> = Vec::new();
    let mut texels = Vec::new();
    let width = record.width;
    let bg = record.background;
    let tile_w = tile.x1 - tile.x0;
    for k in 0..tile.final_t.len() {
        let (x, y) = (tile.x0 + k % tile_w, tile.y0 + k / tile_w);
        let hits = &tile.hits[tile.pixel_start[k] as usize..tile.pixel_start[k + 1] as usize];
        if hits.is_empty() {
            continue;
        }
        let idx = y * width + x;
        let g = PixelGrad::at(grad, idx);
        let t_final = tile.final_t[k];
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let ray = record.camera.ray_dir(px, py);
        let mut suffix = g.color.dot(&bg) * t_final - g.alpha * t_final;
        for hit in hits.iter().rev() {
            let s = &record.splats[hit.splat as usize];
            let pos = match local.binary_search_by_key(&hit.splat, |e| e.0) {
                Ok(p) => p,
                Err(p) => {
                    local.insert(p, (hit.splat, SplatGrad::default()));
                    p
                }
            };
            let sg = &mut local[pos].1;
            hit_backward(scenes, record, s, hit, &g, &ray, [px, py], &mut suffix, sg, &mut texels);
        }
    }
    TileGrads { splats: local, texels }
}

struct PixelGrad {
    color: Vec3,
    alpha: f64,
    depth: f64,
    normal: Vec3,
    c_tex: Vec3,
    coeffs: [f64; 4],
}

impl PixelGrad {
    fn at(g: &RenderTargets, i: usize) -> Self {
        let v3 = |img: &crate::image::Image| Vec3::new(img.data[i * 3], img.data[i * 3 + 1], img.data[i * 3 + 2]);
        PixelGrad {
            color: v3(&g.color),
            alpha: g.alpha.data[i],
            depth: g.depth.data[i],
            normal: v3(&g.normal),
            c_tex: v3(&g.c_tex),
            coeffs: [g.k_a.data[i], g.k_d.data[i], g.k_s.data[i], g.beta.data[i]],
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn hit_backward(
    scenes: &[&BasicSceneModel],
    record: &ForwardRecord,
    s: &PreparedSplat,
    hit: &SplatHit,
    g: &PixelGrad,
    ray: &Vec3,
    pixel: [f64; 2],
    suffix: &mut f64,
    sg: &mut SplatGrad,
    texels: &mut Vec<(u32, u32, [f64; 3])>,
) {
    let prim = s.primitive(scenes);
    let textured = s.tex_center.is_some();
    let taps: Option<BilinearTaps> = match (hit_texel_coords(s, hit), prim.texture.as_ref()) {
        (Some((tu, tv)), Some(tex)) => Some(tex.taps(tu, tv)),
        _ => None,
    };
    let c_tex = match (&taps, prim.texture.as_ref()) {
        (Some(t), Some(tex)) => tex.sample_taps(t),
        _ => Vec3::zeros(),
    };
    let c_base = match s.appearance {
        Appearance::Textured => s.palette + c_tex,
        Appearance::Stylized => c_tex,
        _ => s.base_color,
    };
    let pre_shade = c_base * s.factors.ambient_diffuse + s.specular_color * s.factors.specular;
    let color = match record.mode {
        RenderMode::Shaded if textured => pre_shade.map(|v| v.max(0.0)),
        RenderMode::Shaded => s.shaded_color,
        RenderMode::FlatTexture => c_base,
        RenderMode::Normal => s.normal,
        RenderMode::Depth => Vec3::repeat(hit.depth),
        RenderMode::TextureOffset => c_tex,
    };
    let gf = g.color.dot(&color)
        + g.depth * hit.depth
        + g.normal.dot(&s.normal)
        + g.c_tex.dot(&c_tex)
        + (0..4).map(|k| g.coeffs[k] * s.coeffs[k]).sum::<f64>();
    let t_i = hit.t_before;
    let w = hit.alpha * t_i;
    let g_alpha = t_i * gf - *suffix / (1.0 - hit.alpha);
    *suffix += w * gf;
    sg.touched = true;

    // per-feature gradients scaled by the compositing weight
    let g_col = g.color * w;
    let mut g_depth = g.depth * w;
    let mut g_ctex = g.c_tex * w;
    sg.normal += g.normal * w;
    for k in 0..4 {
        sg.coeffs[k] += g.coeffs[k] * w;
    }
    let mut g_base = Vec3::zeros();
    match record.mode {
        RenderMode::Shaded if textured => {
            for c in 0..3 {
                if pre_shade[c] > 0.0 {
                    g_base[c] += g_col[c] * s.factors.ambient_diffuse;
                    sg.ambient_diffuse += g_col[c] * c_base[c];
                    sg.specular += g_col[c] * s.specular_color[c];
                }
            }
        }
        RenderMode::Shaded => sg.color_const += g_col,
        RenderMode::FlatTexture if textured => g_base += g_col,
        RenderMode::FlatTexture => sg.color_const += g_col,
        RenderMode::Normal => sg.normal += g_col,
        RenderMode::Depth => g_depth += g_col.sum(),
        RenderMode::TextureOffset => g_ctex += g_col,
    }
    match s.appearance {
        Appearance::Textured => {
            sg.palette += g_base;
            g_ctex += g_base;
        }
        Appearance::Stylized => g_ctex += g_base,
        _ => {}
    }

    let (mut g_u, mut g_v) = (0.0, 0.0);
    if let (Some(taps), Some(tex)) = (taps, prim.texture.as_ref()) {
        if g_ctex != Vec3::zeros() {
            let (mut g_tu, mut g_tv) = (0.0, 0.0);
            for k in 0..4 {
                let t = taps.index[k];
                let texel = Vec3::new(tex.texels[t * 3], tex.texels[t * 3 + 1], tex.texels[t * 3 + 2]);
                let gt = g_ctex.dot(&texel);
                g_tu += taps.dw_du[k] * gt;
                g_tv += taps.dw_dv[k] * gt;
                if taps.weight[k] != 0.0 {
                    let gw = g_ctex * taps.weight[k];
                    texels.push((hit.splat, t as u32, [gw.x, gw.y, gw.z]));
                }
            }
            if !hit.low_pass {
                g_u += g_tu * s.s_u / s.t_size;
                g_v += g_tv * s.s_v / s.t_size;
                sg.s_u += g_tu * hit.u / s.t_size;
                sg.s_v += g_tv * hit.v / s.t_size;
            }
        }
    }

    if !hit.clamped {
        sg.opacity += g_alpha * hit.g;
        let g_g = g_alpha * s.opacity;
        if hit.low_pass {
            let k = g_g * hit.g / (LOW_PASS_SIGMA * LOW_PASS_SIGMA);
            sg.center[0] += k * (pixel[0] - s.center_px[0]);
            sg.center[1] += k * (pixel[1] - s.center_px[1]);
        } else {
            g_u -= g_g * hit.g * hit.u;
            g_v -= g_g * hit.g * hit.v;
        }
    }

    if hit.low_pass {
        sg.m.z += g_depth;
    } else {
        intersection_vjp(s, hit, ray, g_u, g_v, g_depth, sg);
    }
}

/// Pulls `(u, v, lambda)` gradients back onto the camera-space splat frame.
fn intersection_vjp(s: &PreparedSplat, hit: &SplatHit, ray: &Vec3, g_u: f64, g_v: f64, g_lambda: f64, sg: &mut SplatGrad) {
    let q = ray * hit.lambda - s.m;
    let g_q = s.a_hat * (g_u / s.s_u) + s.b_hat * (g_v / s.s_v);
    sg.a_hat += q * (g_u / s.s_u);
    sg.b_hat += q * (g_v / s.s_v);
    sg.s_u -= g_u * hit.u / s.s_u;
    sg.s_v -= g_v * hit.v / s.s_v;
    sg.m -= g_q;
    let g_l = g_lambda + g_q.dot(ray);
    let denom = s.n_hat.dot(ray);
    let g_num = g_l / denom;
    let g_den = -g_l * hit.lambda / denom;
    sg.n_hat += s.m * g_num + ray * g_den;
    sg.m += s.n_hat * g_num;
}

fn chain_splat(
    scene: &BasicSceneModel,
    record: &ForwardRecord,
    s: &PreparedSplat,
    sg: &SplatGrad,
    trainable: Trainable,
    bundle: &mut GradientBundle,
) {
    let p = &scene.primitives[s.prim];
    let cam = &record.camera;
    let r_w2c = cam.rotation_w2c();
    let cam_center = cam.center();
    let edit = &scene.edit;
    let light = &record.light;
    let mut g_m = sg.m;

    // projected center (low-pass term)
    let z = s.m.z;
    g_m.x += sg.center[0] * cam.fx / z;
    g_m.y += sg.center[1] * cam.fy / z;
    g_m.z -= (sg.center[0] * cam.fx * s.m.x + sg.center[1] * cam.fy * s.m.y) / (z * z);

    let mut g_mu = r_w2c.transpose() * g_m;
    let mut g_normal = sg.normal;
    let mut g_coeff = sg.coeffs;
    let mut g_to_camera = Vec3::zeros();
    let mut g_ad = sg.ambient_diffuse;
    let mut g_spec = sg.specular;
    let mut g_c_ind = Vec3::zeros();
    let out = &mut bundle.primitives[s.prim];

    match (s.appearance, record.mode) {
        (Appearance::SphericalHarmonics, RenderMode::Shaded | RenderMode::FlatTexture) => {
            let offset = p.mu - cam_center;
            let dir = offset.normalize();
            let (basis, dbasis) = sh_basis_with_grad(&dir);
            let mut raw = Vec3::repeat(SH_DC_OFFSET);
            for (k, c) in p.sh.iter().enumerate().take(16) {
                raw += Vec3::from(*c) * basis[k];
            }
            let g_raw = sg.color_const.zip_map(&raw, |g, r| if r > 0.0 { g } else { 0.0 });
            let mut g_dir = Vec3::zeros();
            for (k, c) in p.sh.iter().enumerate().take(16) {
                if trainable.sh {
                    for ch in 0..3 {
                        out.sh[k][ch] += g_raw[ch] * basis[k];
                    }
                }
                g_dir += Vec3::from(dbasis[k]) * g_raw.dot(&Vec3::from(*c));
            }
            g_mu += normalize_vjp(&offset, &g_dir);
        }
        (Appearance::Relightable, RenderMode::Shaded) => {
            let pre = p.c_ind * s.factors.ambient_diffuse + s.specular_color * s.factors.specular;
            for c in 0..3 {
                if pre[c] > 0.0 {
                    let gc = sg.color_const[c];
                    g_c_ind[c] += gc * s.factors.ambient_diffuse;
                    g_ad += gc * p.c_ind[c];
                    g_spec += gc * s.specular_color[c];
                }
            }
        }
        (Appearance::Relightable, RenderMode::FlatTexture) => g_c_ind += sg.color_const,
        _ => {}
    }

    // Blinn-Phong factors
    let n = s.normal;
    let l = s.light_dir;
    let mut g_l = Vec3::zeros();
    if g_ad != 0.0 || g_spec != 0.0 {
        let nl = n.dot(&l);
        g_coeff[0] += g_ad * light.ambient;
        g_coeff[1] += g_ad * light.diffuse * nl.abs();
        let kd = s.coeffs[1];
        let sign_nl = nl.signum() * if nl == 0.0 { 0.0 } else { 1.0 };
        g_normal += l * (g_ad * kd * light.diffuse * sign_nl);
        g_l += n * (g_ad * kd * light.diffuse * sign_nl);
        if let (Some((h, len)), true) = (s.factors.halfway, nl.abs() > 0.0) {
            let nh = n.dot(&h);
            let (ks, beta) = (s.coeffs[2], s.coeffs[3]);
            let a = nh.abs();
            let pw = a.powf(beta);
            g_coeff[2] += g_spec * light.specular * pw;
            if a > 0.0 {
                g_coeff[3] += g_spec * ks * light.specular * pw * a.ln();
                let d = g_spec * ks * light.specular * beta * a.powf(beta - 1.0) * nh.signum();
                g_normal += h * d;
                let g_h = n * d;
                let sum = h * len;
                let g_sum = normalize_vjp(&sum, &g_h);
                g_to_camera += g_sum;
                g_l += g_sum;
            }
        }
    }
    if edit.light_dir.is_none() && light.headlight {
        g_to_camera += g_l;
    }
    if g_to_camera != Vec3::zeros() {
        // to_camera = normalize(cam - mu)
        g_mu -= normalize_vjp(&(cam_center - p.mu), &g_to_camera);
    }

    // frame
    let g_n0 = r_w2c.transpose() * sg.n_hat + g_normal * s.normal_sign;
    let g_tu = r_w2c.transpose() * sg.a_hat;
    let g_tv = r_w2c.transpose() * sg.b_hat;
    if trainable.rotation {
        if let Ok(unit) = normalize_quat(&p.rot) {
            let g_r = Mat3::from_columns(&[g_tu, g_tv, g_n0]);
            let g_unit = quat_to_matrix_vjp(&unit, &g_r);
            out.rot = normalize_quat_vjp(&p.rot, &g_unit);
        }
    }
    if trainable.position {
        out.mu += g_mu;
    }
    if trainable.scale {
        for (k, g_s) in [sg.s_u, sg.s_v].into_iter().enumerate() {
            let raw = p.log_scale[k].exp();
            if raw >= MIN_SCALE {
                out.log_scale[k] += g_s * raw;
            }
        }
    }
    if trainable.opacity {
        let sig = sigmoid(p.opacity_logit);
        if sig * edit.opacity < 1.0 {
            out.opacity_logit += sg.opacity * edit.opacity * sig * (1.0 - sig);
        }
    }
    if trainable.c_ind {
        out.c_ind += g_c_ind;
    }
    if trainable.shading {
        out.k_a += g_coeff[0] * edit.k_a;
        out.k_d += g_coeff[1] * edit.k_d;
        out.k_s += g_coeff[2] * edit.k_s;
        out.beta += g_coeff[3] * edit.beta;
    }
    if trainable.palette && edit.palette.is_none() {
        bundle.palette += sg.palette;
    }
    let ndc = [g_m.x * z * cam.width as f64 / (2.0 * cam.fx), g_m.y * z * cam.height as f64 / (2.0 * cam.fy)];
    bundle.screen_grad[s.prim] += (ndc[0] * ndc[0] + ndc[1] * ndc[1]).sqrt();
    bundle.visible[s.prim] = true;
}
