//! RGBA8 frame encoding of render targets.

use texgs::image::linear_to_srgb;
use texgs::render::{RenderMode, RenderTargets};

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major RGBA8 pixels. Colors are sRGB encoded; normals map `[-1, 1]`
/// to `[0, 255]`; depth is normalized over the covered pixels, near = bright.
pub fn encode_rgba8(targets: &RenderTargets, mode: RenderMode) -> Vec<u8> {
    let (w, h) = (targets.width(), targets.height());
    let alpha = &targets.alpha.data;
    let color = &targets.color.data;
    let mut out = Vec::with_capacity(w * h * 4);
    match mode {
        RenderMode::Depth => {
            let depth = |i: usize| targets.depth.data[i] / alpha[i];
            let covered = (0..w * h).filter(|&i| alpha[i] > 1e-6);
            let (lo, hi) = covered.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(depth(i)), hi.max(depth(i))));
            let span = (hi - lo).max(1e-12);
            for i in 0..w * h {
                let v = if alpha[i] > 1e-6 { 1.0 - (depth(i) - lo) / span } else { 0.0 };
                let b = byte(v * alpha[i]);
                out.extend_from_slice(&[b, b, b, byte(alpha[i])]);
            }
        }
        RenderMode::Normal => {
            for i in 0..w * h {
                let n = &targets.normal.data[i * 3..i * 3 + 3];
                out.extend_from_slice(&[
                    byte(0.5 * (n[0] + alpha[i])),
                    byte(0.5 * (n[1] + alpha[i])),
                    byte(0.5 * (n[2] + alpha[i])),
                    byte(alpha[i]),
                ]);
            }
        }
        _ => {
            for i in 0..w * h {
                let c = &color[i * 3..i * 3 + 3];
                out.extend_from_slice(&[
                    byte(linear_to_srgb(c[0])),
                    byte(linear_to_srgb(c[1])),
                    byte(linear_to_srgb(c[2])),
                    byte(alpha[i]),
                ]);
            }
        }
    }
    out
}
