//! Structural similarity with an 11x11 Gaussian window (sigma 1.5) and zero
//! padding, plus its exact gradient.

use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

pub fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.map(|v| v / sum)
}

/// Separable zero-padded filtering of one plane. The kernel is symmetric, so
/// this is also its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM over pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_with_grad(a, b, false).0
}

/// Mean SSIM and, if requested, its gradient with respect to `a`.
pub fn ssim_with_grad(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Image>) {
    let (w, h, ch) = (a.width, a.height, a.channels);
    let n = (w * h * ch) as f64;
    let k = gaussian_kernel();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h, ch));
    for c in 0..ch {
        let x = plane(a, c);
        let y = plane(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let exx = blur(&xx, w, h, &k);
        let eyy = blur(&yy, w, h, &k);
        let exy = blur(&xy, w, h, &k);
        let mut g_mx = vec![0.0; w * h];
        let mut g_exx = vec![0.0; w * h];
        let mut g_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let a1 = 2.0 * mx[i] * my[i] + C1;
            let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + C1;
            let b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let d = 1.0 / n;
                g_mx[i] = d * s * (2.0 * my[i] / a1 - 2.0 * my[i] / a2 - 2.0 * mx[i] / b1 + 2.0 * mx[i] / b2);
                g_exy[i] = d * s * 2.0 / a2;
                g_exx[i] = -d * s / b2;
            }
        }
        if let Some(g) = grad.as_mut() {
            let bm = blur(&g_mx, w, h, &k);
            let bxx = blur(&g_exx, w, h, &k);
            let bxy = blur(&g_exy, w, h, &k);
            for i in 0..w * h {
                g.data[i * ch + c] = bm[i] + 2.0 * x[i] * bxx[i] + y[i] * bxy[i];
            }
        }
    }
    (total / n, grad)
}
