//! Procedural scenes and datasets for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraView;
use crate::dataset::{MultiViewDataset, View};
use crate::error::Result;
use crate::image::Image;
use crate::math::{Quat, Vec3};
use crate::train::cameras::icosphere_cameras;
use crate::render::sh::coeff_count;
use crate::scene::{allocate_texels, Appearance, BasicSceneModel, LightConfig, SurfelPrimitive, TextureMap};

/// Rounds through `f32` so values survive the scene file format bit-exactly.
pub fn f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

fn f32_vec(v: Vec3) -> Vec3 {
    v.map(f32_exact)
}

/// Uniformly distributed unit quaternion.
pub fn random_quat(rng: &mut impl Rng) -> Quat {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    [
        (1.0 - u1).sqrt() * (tau * u2).sin(),
        (1.0 - u1).sqrt() * (tau * u2).cos(),
        u1.sqrt() * (tau * u3).sin(),
        u1.sqrt() * (tau * u3).cos(),
    ]
}

/// Camera on a sphere around the origin looking at it, `+z` up.
pub fn orbit_camera(width: usize, height: usize, fov_y_deg: f64, radius: f64, azimuth_deg: f64, elevation_deg: f64) -> CameraView {
    let (a, e) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()) * radius;
    let up = if e.cos().abs() < 1e-6 { Vec3::y() } else { Vec3::z() };
    CameraView::look_at(width, height, fov_y_deg, eye, Vec3::zeros(), up)
}

/// Random surfels inside `[-extent, extent]^3` with every attribute varied.
/// All stored values are exactly representable as `f32`.
pub fn random_scene(seed: u64, count: usize, appearance: Appearance, extent: f64) -> BasicSceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sh_degree = 3u8;
    let mut prims = Vec::with_capacity(count);
    for _ in 0..count {
        let mut p = SurfelPrimitive {
            mu: f32_vec(Vec3::from_fn(|_, _| rng.gen_range(-extent..extent))),
            rot: random_quat(&mut rng).map(f32_exact),
            opacity_logit: f32_exact(rng.gen_range(-1.0..3.0)),
            c_ind: f32_vec(Vec3::from_fn(|_, _| rng.gen_range(0.05..0.95))),
            k_a: f32_exact(rng.gen_range(0.2..1.0)),
            k_d: f32_exact(rng.gen_range(0.0..1.0)),
            k_s: f32_exact(rng.gen_range(0.0..0.8)),
            beta: f32_exact(rng.gen_range(1.0..30.0)),
            ..Default::default()
        };
        let s = extent * 0.25;
        p.log_scale = [f32_exact(rng.gen_range(s * 0.2..s).ln()), f32_exact(rng.gen_range(s * 0.2..s).ln())];
        if appearance == Appearance::SphericalHarmonics {
            p.sh = (0..coeff_count(sh_degree))
                .map(|k| {
                    let amp = if k == 0 { 1.0 } else { 0.3 };
                    [0; 3].map(|_| f32_exact(rng.gen_range(-amp..amp)))
                })
                .collect();
        }
        prims.push(p);
    }
    let mut scene = BasicSceneModel::new(prims, appearance);
    if appearance == Appearance::SphericalHarmonics {
        scene.sh_degree = Some(sh_degree);
    }
    if appearance.is_textured() {
        scene.c_palette = f32_vec(Vec3::from_fn(|_, _| rng.gen_range(0.1..0.7)));
        scene.t_total = (count as u64 * 64).max(1);
        allocate_texels(&mut scene).expect("non-zero texel budget");
        scene.t_size = f32_exact(scene.t_size);
        for p in &mut scene.primitives {
            if let Some(tex) = p.texture.as_mut() {
                randomize_texture(tex, &mut rng, 0.3);
            }
        }
    }
    scene
}

pub fn randomize_texture(tex: &mut TextureMap, rng: &mut impl Rng, amplitude: f64) {
    for t in &mut tex.texels {
        *t = f32_exact(rng.gen_range(-amplitude..amplitude));
    }
}

/// Smooth two-tone albedo on the unit sphere, keyed by longitude and latitude.
pub fn sphere_albedo(dir: &Vec3) -> Vec3 {
    let d = dir.normalize();
    let lon = d.y.atan2(d.x);
    let lat = d.z.clamp(-1.0, 1.0).asin();
    let t = 0.5 + 0.5 * (3.0 * lon).sin() * (2.0 * lat).cos();
    let warm = Vec3::new(0.85, 0.4, 0.2);
    let cool = Vec3::new(0.2, 0.45, 0.8);
    warm * t + cool * (1.0 - t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SphereDatasetOptions {
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
    pub camera_distance: f64,
    pub sphere_radius: f64,
    /// Every `test_every`-th view is held out.
    pub test_every: usize,
    /// Subsamples per pixel edge.
    pub supersample: usize,
    pub background: Vec3,
    pub light: LightConfig,
}

impl Default for SphereDatasetOptions {
    fn default() -> Self {
        SphereDatasetOptions {
            views: 24,
            width: 64,
            height: 64,
            fov_y_deg: 40.0,
            camera_distance: 3.2,
            sphere_radius: 0.8,
            test_every: 6,
            supersample: 4,
            background: Vec3::zeros(),
            light: LightConfig {
                direction: {
                    let d = Vec3::new(0.4, -0.3, 0.87).normalize();
                    [d.x, d.y, d.z]
                },
                ambient: 0.45,
                diffuse: 0.55,
                specular: 0.0,
                ..Default::default()
            },
        }
    }
}

fn ray_sphere(origin: &Vec3, dir: &Vec3, radius: f64) -> Option<f64> {
    let b = origin.dot(dir);
    let c = origin.norm_squared() - radius * radius;
    let a = dir.norm_squared();
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - disc.sqrt()) / a;
    (t > 0.0).then_some(t)
}

/// Ray-traced, supersampled views of a Lambertian textured sphere at the
/// origin. Images are straight RGBA with coverage in alpha.
pub fn textured_sphere_dataset(options: &SphereDatasetOptions) -> Result<MultiViewDataset> {
    let cameras = icosphere_cameras(
        options.views,
        options.camera_distance,
        Vec3::zeros(),
        options.width,
        options.height,
        options.fov_y_deg,
    )?;
    let light_dir = Vec3::from(options.light.direction).normalize();
    let ss = options.supersample.max(1);
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let origin = camera.center();
            let rot = camera.rotation_c2w();
            let mut image = Image::new(camera.width, camera.height, 4);
            for y in 0..camera.height {
                for x in 0..camera.width {
                    let mut color = Vec3::zeros();
                    let mut hits = 0usize;
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                            let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                            let dir = rot * camera.ray_dir(px, py);
                            if let Some(t) = ray_sphere(&origin, &dir, options.sphere_radius) {
                                let n = (origin + dir * t).normalize();
                                let shade = options.light.ambient + options.light.diffuse * n.dot(&light_dir).max(0.0);
                                color += sphere_albedo(&n) * shade;
                                hits += 1;
                            }
                        }
                    }
                    if hits > 0 {
                        let c = color / hits as f64;
                        let a = hits as f64 / (ss * ss) as f64;
                        let at = image.index(x, y);
                        image.data[at..at + 4].copy_from_slice(&[c.x, c.y, c.z, a]);
                    }
                }
            }
            View { name: format!("view_{i:03}"), image, camera }
        })
        .collect();
    let mut ds = MultiViewDataset::new(views, options.background, options.light.clone());
    let every = options.test_every.max(1);
    if options.test_every > 0 {
        ds.test = (0..options.views).filter(|i| i % every == every - 1).collect();
        ds.train = (0..options.views).filter(|i| i % every != every - 1).collect();
    }
    ds.validate()?;
    Ok(ds)
}

/// Surfels tangent to a sphere at Fibonacci-spiral sites, colored with
/// [`sphere_albedo`]. Values are `f32`-exact.
pub fn surfel_sphere_scene(count: usize, radius: f64, appearance: Appearance) -> BasicSceneModel {
    let dirs = crate::train::cameras::fibonacci_sphere(count);
    let spacing = radius * (4.0 * std::f64::consts::PI / count.max(1) as f64).sqrt();
    let prims = dirs
        .iter()
        .map(|d| {
            let albedo = sphere_albedo(d);
            let mut p = SurfelPrimitive {
                mu: f32_vec(d * radius),
                rot: quat_from_normal(d).map(f32_exact),
                opacity_logit: f32_exact(3.0),
                c_ind: f32_vec(albedo),
                k_a: 0.5,
                k_d: 0.5,
                k_s: 0.25,
                beta: 16.0,
                ..Default::default()
            };
            let s = f32_exact((0.6 * spacing).ln());
            p.log_scale = [s, s];
            if appearance == Appearance::SphericalHarmonics {
                p.sh = vec![crate::render::sh::dc_from_color(&albedo).map(f32_exact)];
            }
            p
        })
        .collect();
    let mut scene = BasicSceneModel::new(prims, appearance);
    if appearance == Appearance::SphericalHarmonics {
        scene.sh_degree = Some(0);
    }
    if appearance.is_textured() {
        scene.c_palette = Vec3::new(0.5, 0.45, 0.45);
        scene.t_total = (count as u64 * 16).max(1);
        allocate_texels(&mut scene).expect("non-zero texel budget");
        scene.t_size = f32_exact(scene.t_size);
        let base = if appearance == Appearance::Stylized { Vec3::zeros() } else { scene.c_palette };
        for p in &mut scene.primitives {
            let offset = p.c_ind - base;
            if let Some(tex) = p.texture.as_mut() {
                for (k, t) in tex.texels.iter_mut().enumerate() {
                    *t = f32_exact(offset[k % 3]);
                }
            }
        }
    }
    scene
}

/// Unit quaternion rotating `+z` onto `n`.
pub fn quat_from_normal(n: &Vec3) -> Quat {
    let n = n.normalize();
    let z = Vec3::z();
    let c = z.dot(&n);
    if c < -1.0 + 1e-12 {
        return [0.0, 1.0, 0.0, 0.0];
    }
    let axis = z.cross(&n);
    let w = 1.0 + c;
    let norm = (w * w + axis.norm_squared()).sqrt();
    [w / norm, axis.x / norm, axis.y / norm, axis.z / norm]
}

/// Two disjoint clusters of textured surfels centred at `(-0.6, 0, 0)` and
/// `(0.6, 0, 0)`. Returns the scene and, per primitive, whether it belongs to
/// the first cluster.
pub fn two_cluster_scene(seed: u64, per_cluster: usize) -> (BasicSceneModel, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prims = Vec::with_capacity(per_cluster * 2);
    let mut first = Vec::with_capacity(per_cluster * 2);
    for (cx, tint) in [(-0.6, Vec3::new(0.8, 0.3, 0.2)), (0.6, Vec3::new(0.2, 0.4, 0.8))] {
        for _ in 0..per_cluster {
            let offset = loop {
                let v = Vec3::from_fn(|_, _| rng.gen_range(-0.2..0.2));
                if v.norm() <= 0.2 {
                    break v;
                }
            };
            let mut p = SurfelPrimitive {
                mu: f32_vec(Vec3::new(cx, 0.0, 0.0) + offset),
                rot: random_quat(&mut rng).map(f32_exact),
                opacity_logit: f32_exact(rng.gen_range(0.5..2.5)),
                c_ind: f32_vec(tint),
                k_a: 0.6,
                k_d: 0.4,
                k_s: 0.1,
                beta: 8.0,
                ..Default::default()
            };
            p.log_scale = [0; 2].map(|_| f32_exact(rng.gen_range(0.03f64..0.06).ln()));
            prims.push(p);
            first.push(cx < 0.0);
        }
    }
    let mut scene = BasicSceneModel::new(prims, Appearance::Textured);
    scene.c_palette = Vec3::new(0.25, 0.25, 0.25);
    scene.t_total = (per_cluster as u64 * 2 * 16).max(1);
    allocate_texels(&mut scene).expect("non-zero texel budget");
    scene.t_size = f32_exact(scene.t_size);
    for p in &mut scene.primitives {
        let base = p.c_ind;
        if let Some(tex) = p.texture.as_mut() {
            for (k, t) in tex.texels.iter_mut().enumerate() {
                *t = f32_exact(base[k % 3] - 0.25);
            }
        }
    }
    (scene, first)
}

/// Cameras on a circle in the `x = 0` plane: the two clusters of
/// [`two_cluster_scene`] never overlap on screen.
pub fn side_cameras(count: usize, width: usize, height: usize) -> Vec<CameraView> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let eye = Vec3::new(0.0, a.cos(), a.sin()) * 3.0;
            let up = Vec3::new(1.0, 0.0, 0.0);
            CameraView::look_at(width, height, 45.0, eye, Vec3::zeros(), up)
        })
        .collect()
}
