//! Straightforward per-pixel renderer used to cross-check the tiled one.
//!
//! Every pixel visits every surfel. The ray-splat intersection solves the
//! two homogeneous plane equations of the pixel in surfel coordinates
//! instead of intersecting the ray with the surfel plane, and textures are
//! sampled from world-space offsets.

use crate::camera::CameraView;
use crate::error::Result;
use crate::math::{derive_frame, Vec3};
use crate::scene::{sample_texture, Appearance, BasicSceneModel, ComposedScene, SurfelPrimitive};

use super::shading::{shade_blinn_phong, ShadingCoefficients};
use super::{
    effective_coeffs, effective_opacity, resolve_light_dir, sh, RenderMode, RenderOptions, RenderTargets,
    ALPHA_CUTOFF, LOW_PASS_SIGMA, MAX_ALPHA, MIN_TRANSMITTANCE,
};

struct Candidate<'a> {
    scene: &'a BasicSceneModel,
    prim: &'a SurfelPrimitive,
    depth_key: (f64, usize, usize),
    /// Rows of the surfel-to-screen homography: (x w, y w, w) = rows * (u, v, 1).
    rows: [[f64; 3]; 3],
    opacity: f64,
    center_px: [f64; 2],
}

pub fn render_reference(scene: &ComposedScene, camera: &CameraView, options: &RenderOptions) -> Result<RenderTargets> {
    camera.validate()?;
    let scenes = scene.visible_scenes();
    let r = camera.rotation_w2c();
    let c = camera.center();
    let mut cands = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (pi, p) in s.primitives.iter().enumerate() {
            let opacity = effective_opacity(s, p);
            let m = r * (p.mu - c);
            if m.z <= camera.near || opacity < ALPHA_CUTOFF {
                continue;
            }
            let (t_u, t_v, _) = p.axes();
            let cols = [r * t_u * p.scale_u(), r * t_v * p.scale_v(), m];
            let mut rows = [[0.0; 3]; 3];
            for (k, col) in cols.iter().enumerate() {
                rows[0][k] = camera.fx * col.x + camera.cx * col.z;
                rows[1][k] = camera.fy * col.y + camera.cy * col.z;
                rows[2][k] = col.z;
            }
            cands.push(Candidate {
                scene: s,
                prim: p,
                depth_key: (m.z, si, pi),
                rows,
                opacity,
                center_px: camera.project(&m),
            });
        }
    }
    cands.sort_by(|a, b| {
        a.depth_key.0.total_cmp(&b.depth_key.0).then(a.depth_key.1.cmp(&b.depth_key.1)).then(a.depth_key.2.cmp(&b.depth_key.2))
    });

    let mut out = RenderTargets::new(camera.width, camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut color = Vec3::zeros();
            let mut depth = 0.0;
            let mut normal = Vec3::zeros();
            let mut c_tex_acc = Vec3::zeros();
            let mut coeff_acc = [0.0; 4];
            for cand in &cands {
                let Some((u, v)) = solve_uv(&cand.rows, px, py) else {
                    continue;
                };
                let (s_u, s_v) = (cand.prim.scale_u(), cand.prim.scale_v());
                let (t_u, t_v, _) = cand.prim.axes();
                let p_local = t_u * (u * s_u) + t_v * (v * s_v);
                let hit_depth = camera.world_to_camera(&(cand.prim.mu + p_local)).z;
                let g3 = if hit_depth > camera.near { (-0.5 * (u * u + v * v)).exp() } else { 0.0 };
                let dx = px - cand.center_px[0];
                let dy = py - cand.center_px[1];
                let g2 = (-(dx * dx + dy * dy) / (2.0 * LOW_PASS_SIGMA * LOW_PASS_SIGMA)).exp();
                let (g, p_local, hit_depth) =
                    if g2 > g3 { (g2, Vec3::zeros(), cand.depth_key.0) } else { (g3, p_local, hit_depth) };
                let raw = cand.opacity * g;
                if raw < ALPHA_CUTOFF {
                    continue;
                }
                let alpha = raw.min(MAX_ALPHA);
                let (col, ctex, n, k) = surfel_values(cand, camera, options, &p_local, hit_depth)?;
                let w = alpha * t;
                color += col * w;
                depth += hit_depth * w;
                normal += n * w;
                c_tex_acc += ctex * w;
                for i in 0..4 {
                    coeff_acc[i] += k[i] * w;
                }
                t *= 1.0 - alpha;
                if t < MIN_TRANSMITTANCE {
                    break;
                }
            }
            color += options.background * t;
            let idx = y * camera.width + x;
            out.color.data[idx * 3..idx * 3 + 3].copy_from_slice(color.as_slice());
            out.alpha.data[idx] = 1.0 - t;
            out.depth.data[idx] = depth;
            out.normal.data[idx * 3..idx * 3 + 3].copy_from_slice(normal.as_slice());
            out.c_tex.data[idx * 3..idx * 3 + 3].copy_from_slice(c_tex_acc.as_slice());
            out.k_a.data[idx] = coeff_acc[0];
            out.k_d.data[idx] = coeff_acc[1];
            out.k_s.data[idx] = coeff_acc[2];
            out.beta.data[idx] = coeff_acc[3];
        }
    }
    Ok(out)
}

/// Cramer solve of `(x row2 - row0) . (u, v, 1) = 0` and `(y row2 - row1) . (u, v, 1) = 0`.
fn solve_uv(rows: &[[f64; 3]; 3], px: f64, py: f64) -> Option<(f64, f64)> {
    let hx: Vec<f64> = (0..3).map(|k| px * rows[2][k] - rows[0][k]).collect();
    let hy: Vec<f64> = (0..3).map(|k| py * rows[2][k] - rows[1][k]).collect();
    let det = hx[0] * hy[1] - hx[1] * hy[0];
    let scale = hx.iter().chain(hy.iter()).map(|v| v.abs()).fold(0.0, f64::max);
    if det.abs() <= 1e-12 * scale * scale {
        return None;
    }
    let u = (hx[1] * hy[2] - hx[2] * hy[1]) / det;
    let v = (hx[2] * hy[0] - hx[0] * hy[2]) / det;
    Some((u, v))
}

fn surfel_values(
    cand: &Candidate,
    camera: &CameraView,
    options: &RenderOptions,
    p_local: &Vec3,
    hit_depth: f64,
) -> Result<(Vec3, Vec3, Vec3, [f64; 4])> {
    let p = cand.prim;
    let s = cand.scene;
    let view_dir = (p.mu - camera.center()).normalize();
    let frame = derive_frame(&p.rot, &view_dir)?;
    let to_camera = -view_dir;
    let coeffs: ShadingCoefficients = effective_coeffs(s, p);
    let c_tex = if s.appearance.is_textured() { sample_texture(p, s.t_size, p_local) } else { Vec3::zeros() };
    let c_base = match s.appearance {
        Appearance::SphericalHarmonics => sh::eval_sh(&p.sh, &view_dir),
        Appearance::Relightable => p.c_ind,
        Appearance::Textured => s.effective_palette() + c_tex,
        Appearance::Stylized => c_tex,
    };
    let light_dir = resolve_light_dir(s, &options.light, &to_camera);
    let color = match options.mode {
        RenderMode::Shaded => match s.appearance {
            Appearance::SphericalHarmonics => c_base,
            _ => shade_blinn_phong(&coeffs, &c_base, &frame.normal, &light_dir, &options.light, &to_camera),
        },
        RenderMode::FlatTexture => c_base,
        RenderMode::Normal => frame.normal,
        RenderMode::Depth => Vec3::repeat(hit_depth),
        RenderMode::TextureOffset => c_tex,
    };
    Ok((color, c_tex, frame.normal, [coeffs.k_a, coeffs.k_d, coeffs.k_s, coeffs.beta]))
}
