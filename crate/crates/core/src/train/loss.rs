//! Training losses. Each returns its value together with the gradient on the
//! rendered maps it reads.

use crate::camera::CameraView;
use crate::error::Result;
use crate::image::Image;
use crate::math::{normalize_vjp, Vec3};
use crate::render::RenderTargets;

use super::ssim::ssim_with_grad;

/// Mean absolute difference and its gradient with respect to `a`.
pub fn l1_with_grad(a: &Image, b: &Image) -> (f64, Image) {
    let n = a.data.len() as f64;
    let mut g = Image::new(a.width, a.height, a.channels);
    let mut total = 0.0;
    for ((ga, x), y) in g.data.iter_mut().zip(&a.data).zip(&b.data) {
        let d = x - y;
        total += d.abs();
        *ga = if d > 0.0 { 1.0 / n } else if d < 0.0 { -1.0 / n } else { 0.0 };
    }
    (total / n, g)
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2` and its gradient on `rendered`.
pub fn photometric(rendered: &Image, truth: &Image, lambda_ssim: f64) -> Result<(f64, Image)> {
    rendered.ensure_same_shape(truth, "photometric loss")?;
    let (l1, mut g) = l1_with_grad(rendered, truth);
    g.data.iter_mut().for_each(|v| *v *= 1.0 - lambda_ssim);
    if lambda_ssim == 0.0 {
        return Ok(((1.0 - lambda_ssim) * l1, g));
    }
    let (s, gs) = ssim_with_grad(rendered, truth, true);
    if let Some(gs) = gs {
        for (a, b) in g.data.iter_mut().zip(&gs.data) {
            *a -= 0.5 * lambda_ssim * b;
        }
    }
    Ok(((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s) / 2.0, g))
}

/// Ground-truth color composited over the background.
pub fn composite_over(rgba: &Image, background: &Vec3) -> Image {
    let mut out = Image::new(rgba.width, rgba.height, 3);
    for (o, px) in out.data.chunks_exact_mut(3).zip(rgba.data.chunks_exact(4)) {
        let a = px[3];
        for c in 0..3 {
            o[c] = px[c] * a + background[c] * (1.0 - a);
        }
    }
    out
}

pub fn alpha_channel(rgba: &Image) -> Image {
    rgba.select_channels(3..4)
}

#[derive(Debug, Clone)]
pub struct PhotometricLoss {
    pub color: f64,
    pub alpha: f64,
    pub grad_color: Image,
    pub grad_alpha: Image,
}

/// Color and alpha reconstruction losses against an RGBA ground truth.
pub fn loss_photometric(
    rendered: &RenderTargets,
    truth_rgba: &Image,
    background: &Vec3,
    lambda_ssim: f64,
) -> Result<PhotometricLoss> {
    let truth_rgb = composite_over(truth_rgba, background);
    let (color, grad_color) = photometric(&rendered.color, &truth_rgb, lambda_ssim)?;
    let (alpha, grad_alpha) = photometric(&rendered.alpha, &alpha_channel(truth_rgba), lambda_ssim)?;
    Ok(PhotometricLoss { color, alpha, grad_color, grad_alpha })
}

#[derive(Debug, Clone)]
pub struct NormalLoss {
    pub value: f64,
    pub grad_alpha: Image,
    pub grad_depth: Image,
    pub grad_normal: Image,
}

/// Agreement between rendered normals and normals of the rendered depth map.
///
/// Per valid pixel the term is `alpha - N . n_d`, the compositing-weighted sum
/// of `1 - n_i . n_d`, averaged over all pixels. `n_d` comes from central
/// differences of the back-projected depth; a pixel is valid when it and its
/// four neighbours have `alpha >= 0.5` and it is not on the border.
pub fn loss_normal_consistency(rendered: &RenderTargets, camera: &CameraView) -> NormalLoss {
    let (w, h) = (rendered.width(), rendered.height());
    let hw = (w * h) as f64;
    let mut out = NormalLoss {
        value: 0.0,
        grad_alpha: Image::new(w, h, 1),
        grad_depth: Image::new(w, h, 1),
        grad_normal: Image::new(w, h, 3),
    };
    if w < 3 || h < 3 {
        return out;
    }
    let alpha = &rendered.alpha.data;
    let depth = &rendered.depth.data;
    let c2w = camera.rotation_c2w();
    let point = |x: usize, y: usize| -> Vec3 {
        let i = y * w + x;
        camera.ray_dir(x as f64 + 0.5, y as f64 + 0.5) * (depth[i] / alpha[i])
    };
    let valid = |x: usize, y: usize| -> bool {
        [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].iter().all(|&(a, b)| alpha[b * w + a] >= 0.5)
    };
    let mut g_point = vec![Vec3::zeros(); w * h];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if !valid(x, y) {
                continue;
            }
            let i = y * w + x;
            let dpx = point(x + 1, y) - point(x - 1, y);
            let dpy = point(x, y + 1) - point(x, y - 1);
            let cross = dpy.cross(&dpx);
            let len = cross.norm();
            if !(len > 1e-20) {
                continue;
            }
            let n_d = c2w * (cross / len);
            let n = Vec3::new(rendered.normal.data[i * 3], rendered.normal.data[i * 3 + 1], rendered.normal.data[i * 3 + 2]);
            out.value += (alpha[i] - n.dot(&n_d)) / hw;
            out.grad_alpha.data[i] += 1.0 / hw;
            for c in 0..3 {
                out.grad_normal.data[i * 3 + c] -= n_d[c] / hw;
            }
            let g_nc = c2w.transpose() * (-n / hw);
            let g_cross = normalize_vjp(&cross, &g_nc);
            let g_dpy = dpx.cross(&g_cross);
            let g_dpx = g_cross.cross(&dpy);
            g_point[y * w + x + 1] += g_dpx;
            g_point[y * w + x - 1] -= g_dpx;
            g_point[(y + 1) * w + x] += g_dpy;
            g_point[(y - 1) * w + x] -= g_dpy;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if g_point[i] == Vec3::zeros() {
                continue;
            }
            let g_d = g_point[i].dot(&camera.ray_dir(x as f64 + 0.5, y as f64 + 0.5));
            out.grad_depth.data[i] += g_d / alpha[i];
            out.grad_alpha.data[i] -= g_d * depth[i] / (alpha[i] * alpha[i]);
        }
    }
    out
}

/// Edge-aware smoothness of a single-channel map guided by an RGB image:
/// the mean over pixels of `|dK| * exp(-sum_c |dI_c|)` along x and y forward
/// differences.
pub fn loss_bilateral(coeff: &Image, guide: &Image) -> Result<(f64, Image)> {
    coeff.ensure_same_shape(&guide.select_channels(0..1), "bilateral loss")?;
    let (w, h) = (coeff.width, coeff.height);
    let hw = (w * h) as f64;
    let mut g = Image::new(w, h, 1);
    let mut total = 0.0;
    let mut edge = |i: usize, j: usize, g: &mut Image| {
        let dk = coeff.data[j] - coeff.data[i];
        let dc: f64 = (0..guide.channels).map(|c| (guide.data[j * guide.channels + c] - guide.data[i * guide.channels + c]).abs()).sum();
        let wgt = (-dc).exp();
        total += dk.abs() * wgt / hw;
        let s = if dk > 0.0 { wgt / hw } else if dk < 0.0 { -wgt / hw } else { 0.0 };
        g.data[j] += s;
        g.data[i] -= s;
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edge(i, i + 1, &mut g);
            }
            if y + 1 < h {
                edge(i, i + w, &mut g);
            }
        }
    }
    Ok((total, g))
}

/// Mean absolute texture offset over pixels and channels.
pub fn loss_sparsity(c_tex: &Image) -> (f64, Image) {
    let n = c_tex.data.len() as f64;
    let mut g = Image::new(c_tex.width, c_tex.height, c_tex.channels);
    let mut total = 0.0;
    for (gv, v) in g.data.iter_mut().zip(&c_tex.data) {
        total += v.abs();
        *gv = if *v > 0.0 { 1.0 / n } else if *v < 0.0 { -1.0 / n } else { 0.0 };
    }
    (total / n, g)
}
