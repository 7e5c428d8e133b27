//! Camera rigs on a sphere around a target.

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Vertices of an icosahedron subdivided `levels` times, on the unit sphere.
pub fn icosphere_vertices(levels: usize) -> Vec<Vec3> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0], [1.0, t, 0.0], [-1.0, -t, 0.0], [1.0, -t, 0.0],
        [0.0, -1.0, t], [0.0, 1.0, t], [0.0, -1.0, -t], [0.0, 1.0, -t],
        [t, 0.0, -1.0], [t, 0.0, 1.0], [-t, 0.0, -1.0], [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    verts
}

/// Evenly spread unit vectors on a golden-angle spiral.
pub fn fibonacci_sphere(count: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Sphere directions for a rig of `count` cameras: exact icosphere levels for
/// 12, 42, 162 and 642, a Fibonacci spiral otherwise.
pub fn sphere_directions(count: usize) -> Result<Vec<Vec3>> {
    if count < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 cameras, got {count}")));
    }
    Ok(match count {
        12 => icosphere_vertices(0),
        42 => icosphere_vertices(1),
        162 => icosphere_vertices(2),
        642 => icosphere_vertices(3),
        _ => fibonacci_sphere(count),
    })
}

/// Cameras on a sphere of `radius` around `target`, each looking at it.
pub fn icosphere_cameras(
    count: usize,
    radius: f64,
    target: Vec3,
    width: usize,
    height: usize,
    fov_y_deg: f64,
) -> Result<Vec<CameraView>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    Ok(sphere_directions(count)?
        .into_iter()
        .map(|d| {
            // keep the roll stable: world +z is up unless the view is nearly vertical
            let up = if d.z.abs() > 0.999 { Vec3::y() } else { Vec3::z() };
            CameraView::look_at(width, height, fov_y_deg, target + d * radius, target, up)
        })
        .collect())
}

pub fn min_angular_separation_deg(dirs: &[Vec3]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            let c = dirs[i].normalize().dot(&dirs[j].normalize()).clamp(-1.0, 1.0);
            best = best.min(c.acos().to_degrees());
        }
    }
    best
}
