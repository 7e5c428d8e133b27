//! Small geometry helpers shared by the renderer and its gradients.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Quaternion stored as `[w, x, y, z]`.
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn normalize_quat(q: &Quat) -> Result<Quat> {
    let n = quat_norm(q);
    if !(n > 1e-12) || !n.is_finite() {
        return Err(Error::InvalidParameter("zero-norm quaternion".into()));
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

/// Rotation matrix of a unit quaternion. Columns are `t_u`, `t_v` and the
/// un-oriented normal `t_u x t_v`.
pub fn quat_to_matrix(q: &Quat) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back onto the (unit) quaternion.
pub fn quat_to_matrix_vjp(q: &Quat, g: &Mat3) -> Quat {
    let [w, x, y, z] = *q;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)]
            + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    [gw, gx, gy, gz]
}

/// Gradient of `q / |q|` pulled back onto the raw quaternion.
pub fn normalize_quat_vjp(raw: &Quat, g_unit: &Quat) -> Quat {
    let n = quat_norm(raw);
    let unit = [raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n];
    let dot: f64 = (0..4).map(|i| unit[i] * g_unit[i]).sum();
    [
        (g_unit[0] - dot * unit[0]) / n,
        (g_unit[1] - dot * unit[1]) / n,
        (g_unit[2] - dot * unit[2]) / n,
        (g_unit[3] - dot * unit[3]) / n,
    ]
}

/// Gradient of `v / |v|` pulled back onto `v`.
pub fn normalize_vjp(v: &Vec3, g_unit: &Vec3) -> Vec3 {
    let n = v.norm();
    let unit = v / n;
    (g_unit - unit * unit.dot(g_unit)) / n
}

/// Tangent frame of a surfel oriented towards the viewer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub t_u: Vec3,
    pub t_v: Vec3,
    pub normal: Vec3,
}

/// Tangent axes from the rotation plus the normal flipped so that
/// `normal . view_dir < 0` (it faces the camera looking along `view_dir`).
pub fn derive_frame(rot: &Quat, view_dir: &Vec3) -> Result<Frame> {
    let n = quat_norm(rot);
    if !(n > 1e-12) {
        return Err(Error::InvalidParameter("zero-norm quaternion".into()));
    }
    let r = quat_to_matrix(&normalize_quat(rot)?);
    let t_u: Vec3 = r.column(0).into();
    let t_v: Vec3 = r.column(1).into();
    let mut normal: Vec3 = r.column(2).into();
    if normal.dot(view_dir) > 0.0 {
        normal = -normal;
    }
    Ok(Frame { t_u, t_v, normal })
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}
