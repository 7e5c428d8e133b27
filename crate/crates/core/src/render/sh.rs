//! Real spherical harmonics up to degree 3 in the ordering and sign
//! convention used by Gaussian-splatting codebases.

use crate::math::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the DC term so zero coefficients render mid-gray.
pub const SH_DC_OFFSET: f64 = 0.5;

pub fn coeff_count(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d
}

/// Basis values and their gradients with respect to the (unit) direction.
pub fn sh_basis_with_grad(dir: &Vec3) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let b = [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];
    let g = [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[1] * z, SH_C2[1] * y],
        [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z],
        [SH_C2[3] * z, 0.0, SH_C2[3] * x],
        [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0],
        [SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [
            -2.0 * SH_C3[2] * x * y,
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            8.0 * SH_C3[2] * y * z,
        ],
        [
            -6.0 * SH_C3[3] * x * z,
            -6.0 * SH_C3[3] * y * z,
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ],
        [
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            -2.0 * SH_C3[4] * x * y,
            8.0 * SH_C3[4] * x * z,
        ],
        [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)],
        [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0],
    ];
    (b, g)
}

pub fn sh_basis(dir: &Vec3) -> [f64; 16] {
    sh_basis_with_grad(dir).0
}

/// Unclamped `sum_k Y_k(dir) c_k + 0.5` per channel.
pub fn eval_sh_raw(coeffs: &[[f64; 3]], dir: &Vec3) -> Vec3 {
    let basis = sh_basis(dir);
    let mut c = Vec3::repeat(SH_DC_OFFSET);
    for (k, coeff) in coeffs.iter().enumerate().take(16) {
        c.x += basis[k] * coeff[0];
        c.y += basis[k] * coeff[1];
        c.z += basis[k] * coeff[2];
    }
    c
}

/// View-dependent color for a unit direction (from the camera towards the
/// surfel), clamped at zero.
pub fn eval_sh(coeffs: &[[f64; 3]], dir: &Vec3) -> Vec3 {
    eval_sh_raw(coeffs, dir).map(|v| v.max(0.0))
}

/// DC coefficient whose rendered color is `color`.
pub fn dc_from_color(color: &Vec3) -> [f64; 3] {
    let dc = (color - Vec3::repeat(SH_DC_OFFSET)) / SH_C0;
    [dc.x, dc.y, dc.z]
}

/// Color represented by the DC coefficient alone.
pub fn color_from_dc(dc: &[f64; 3]) -> Vec3 {
    Vec3::new(dc[0], dc[1], dc[2]) * SH_C0 + Vec3::repeat(SH_DC_OFFSET)
}
