//! Blinn-Phong shading of a surfel's base color.

use crate::math::Vec3;
use crate::scene::LightConfig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingCoefficients {
    pub k_a: f64,
    pub k_d: f64,
    pub k_s: f64,
    pub beta: f64,
}

/// The shaded color is `ambient_diffuse * c_base + specular * I_s`, so
/// textured surfels only need these two scalars per view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlinnPhongFactors {
    pub ambient_diffuse: f64,
    pub specular: f64,
    pub n_dot_l: f64,
    /// Unit halfway vector; `None` when the view and light directions cancel.
    pub halfway: Option<(Vec3, f64)>,
}

/// `n`, `light_dir` and `view` are unit vectors; `view` points from the
/// surface towards the camera and `light_dir` towards the light.
pub fn blinn_phong_factors(
    coeffs: &ShadingCoefficients,
    n: &Vec3,
    light_dir: &Vec3,
    light: &LightConfig,
    view: &Vec3,
) -> BlinnPhongFactors {
    let n_dot_l = n.dot(light_dir);
    let ambient_diffuse = coeffs.k_a * light.ambient + coeffs.k_d * light.diffuse * n_dot_l.abs();
    let sum = view + light_dir;
    let len = sum.norm();
    let halfway = if len > 1e-12 { Some((sum / len, len)) } else { None };
    let specular = match halfway {
        Some((h, _)) if n_dot_l.abs() > 0.0 => {
            coeffs.k_s * light.specular * n.dot(&h).abs().powf(coeffs.beta)
        }
        _ => 0.0,
    };
    BlinnPhongFactors { ambient_diffuse, specular, n_dot_l, halfway }
}

/// Ambient + diffuse + specular color, clamped to be non-negative.
pub fn shade_blinn_phong(
    coeffs: &ShadingCoefficients,
    c_base: &Vec3,
    n: &Vec3,
    light_dir: &Vec3,
    light: &LightConfig,
    view: &Vec3,
) -> Vec3 {
    let f = blinn_phong_factors(coeffs, n, light_dir, light, view);
    let i_s = Vec3::from(light.specular_color);
    (c_base * f.ambient_diffuse + i_s * f.specular).map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    const COEFFS: ShadingCoefficients = ShadingCoefficients { k_a: 0.3, k_d: 0.6, k_s: 0.4, beta: 12.0 };

    #[test]
    fn grazing_light_leaves_ambient() {
        let n = Vec3::z();
        let l = Vec3::x();
        let v = Vec3::new(0.0, 0.6, 0.8);
        let c = Vec3::new(0.2, 0.5, 0.9);
        let out = shade_blinn_phong(&COEFFS, &c, &n, &l, &LightConfig::default(), &v);
        assert_eq!(out, c * 0.3);
    }

    #[test]
    fn aligned_light_and_view() {
        let n = Vec3::new(1.0, 2.0, -2.0).normalize();
        let c = Vec3::new(0.2, 0.5, 0.9);
        let out = shade_blinn_phong(&COEFFS, &c, &n, &n, &LightConfig::default(), &n);
        let expected = c * 0.3 + c * 0.6 + Vec3::repeat(0.4);
        assert!((out - expected).norm() < 1e-12);
    }

    #[test]
    fn opposite_view_and_light_drop_specular() {
        let n = Vec3::z();
        let l = Vec3::new(0.6, 0.0, 0.8);
        let f = blinn_phong_factors(&COEFFS, &n, &l, &LightConfig::default(), &-l);
        assert_eq!(f.specular, 0.0);
        assert!(f.halfway.is_none());
    }
}
