//! One test per acceptance criterion. Each prints a single
//! `ACCEPTANCE <criterion>: PASS|FAIL <details>` line before asserting.
//! Run with `cargo test -p texgs-cli --test acceptance`.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use texgs::camera::CameraView;
use texgs::dataset::{MultiViewDataset, View};
use texgs::edit::features::ToyExtractor;
use texgs::edit::stylize::{
    opacity_schedule, six_view_cameras, stylize_image, stylize_text, ImageStyleOptions, TextStyleOptions,
};
use texgs::image::{psnr, Image};
use texgs::io::{read_scene, save_basic_scene, scene_file_size, write_scene};
use texgs::math::Vec3;
use texgs::render::backward::{backward, Trainable};
use texgs::render::reference::render_reference;
use texgs::render::shading::{shade_blinn_phong, ShadingCoefficients};
use texgs::render::{render, render_basic, render_with_record, RenderMode, RenderOptions, RenderTargets};
use texgs::scene::{allocate_texels, Appearance, BasicSceneModel, ComposedScene, LightConfig, SurfelPrimitive, TextureMap};
use texgs::segment::{accumulate_votes, split_into_composed, vote_labels, Mask, MaskSet, VoteParams};
use texgs::synthetic::{
    orbit_camera, random_scene, randomize_texture, side_cameras, surfel_sphere_scene, textured_sphere_dataset,
    two_cluster_scene, SphereDatasetOptions,
};
use texgs::train::fit::{evaluate_psnr, fit};
use texgs::train::loss::composite_over;
use texgs::train::TrainConfig;

const MIB: f64 = 1024.0 * 1024.0;

/// Several criteria are timed, so the tests run one at a time.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Writes to the stdout handle directly, which the test harness does not capture.
fn report(criterion: &str, pass: bool, details: String) {
    let line = format!("ACCEPTANCE {criterion}: {} {details}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).and_then(|_| out.flush()).expect("stdout is writable");
    assert!(pass, "{criterion}: {details}");
}

fn light() -> LightConfig {
    LightConfig {
        ambient: 0.45,
        diffuse: 0.7,
        specular: 0.35,
        ..LightConfig::with_direction(Vec3::new(0.3, -0.5, 0.8))
    }
}

const APPEARANCES: [Appearance; 4] =
    [Appearance::SphericalHarmonics, Appearance::Relightable, Appearance::Textured, Appearance::Stylized];

#[test]
fn oracle_equivalence() {
    let _serial = serial();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut hits = 0usize;
    for seed in 0..100u64 {
        let count = 1 + (seed as usize * 7) % 16;
        let appearance = APPEARANCES[seed as usize % 4];
        let scene = ComposedScene::single(random_scene(1000 + seed, count, appearance, 1.0));
        let cam = orbit_camera(16, 16, 50.0, 4.0, seed as f64 * 29.0, -40.0 + (seed % 9) as f64 * 10.0);
        for mode in RenderMode::ALL {
            let options = RenderOptions::new(mode, light());
            let fast = render(&scene, &cam, &options).unwrap();
            let slow = render_reference(&scene, &cam, &options).unwrap();
            worst = worst.max(fast.max_abs_diff(&slow));
            hits += fast.alpha.data.iter().filter(|&&a| a > 0.0).count();
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    report(
        "oracle equivalence",
        worst <= 1e-4 && seconds < 10.0 && hits > 0,
        format!("(100 scenes x 5 modes, max |diff| {worst:.2e} <= 1e-4, {seconds:.2} s < 10 s, {hits} covered pixels)"),
    );
}

/// Tilt of at most `max_tilt_deg` away from facing the camera, any spin, slightly off unit length.
fn tilted_quat(rng: &mut ChaCha8Rng, max_tilt_deg: f64) -> [f64; 4] {
    let spin = rng.gen_range(0.0..std::f64::consts::TAU) / 2.0;
    let tilt = rng.gen_range(0.0..max_tilt_deg).to_radians() / 2.0;
    let axis = rng.gen_range(0.0..std::f64::consts::TAU);
    let spin_q = [spin.cos(), 0.0, 0.0, spin.sin()];
    let tilt_q = [tilt.cos(), tilt.sin() * axis.cos(), tilt.sin() * axis.sin(), 0.0];
    let [a0, a1, a2, a3] = tilt_q;
    let [b0, b1, b2, b3] = spin_q;
    let q = [
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ];
    q.map(|v| v * 1.05)
}

/// Large, partially transparent surfels covering the view, so no cutoff sits near a pixel center.
fn gradient_scene(seed: u64, appearance: Appearance, count: usize) -> BasicSceneModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..count)
        .map(|_| {
            let mut p = SurfelPrimitive {
                mu: Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.5)),
                rot: tilted_quat(&mut rng, 35.0),
                opacity_logit: rng.gen_range(0.0..1.2),
                c_ind: Vec3::from_fn(|_, _| rng.gen_range(0.2..0.8)),
                k_a: rng.gen_range(0.3..1.0),
                k_d: rng.gen_range(0.2..1.0),
                k_s: rng.gen_range(0.1..0.6),
                beta: rng.gen_range(2.0..12.0),
                ..Default::default()
            };
            p.set_scales(rng.gen_range(1.1..1.6), rng.gen_range(1.1..1.6));
            if appearance == Appearance::SphericalHarmonics {
                p.sh = (0..16).map(|k| [0; 3].map(|_| rng.gen_range(-1.0..1.0) * if k == 0 { 0.3 } else { 0.08 })).collect();
            }
            p
        })
        .collect();
    let mut scene = BasicSceneModel::new(prims, appearance);
    if appearance == Appearance::SphericalHarmonics {
        scene.sh_degree = Some(3);
    }
    if appearance.is_textured() {
        scene.c_palette = Vec3::new(0.5, 0.4, 0.6);
        scene.t_total = 48 * count as u64;
        allocate_texels(&mut scene).unwrap();
        for p in &mut scene.primitives {
            randomize_texture(p.texture.as_mut().unwrap(), &mut rng, 0.15);
        }
    }
    scene
}

fn random_targets(seed: u64, w: usize, h: usize) -> RenderTargets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = RenderTargets::new(w, h);
    for img in [
        &mut t.color, &mut t.alpha, &mut t.depth, &mut t.normal, &mut t.c_tex, &mut t.k_a, &mut t.k_d, &mut t.k_s,
        &mut t.beta,
    ] {
        img.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    t
}

fn weighted_sum(t: &RenderTargets, w: &RenderTargets) -> f64 {
    t.maps().iter().zip(w.maps().iter()).map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>()).sum()
}

/// Attribute class of the `k`-th scalar of a primitive in gradient order.
fn attribute_class(k: usize, sh_len: usize) -> &'static str {
    match k {
        0..=2 => "position",
        3..=6 => "rotation",
        7..=8 => "scale",
        9 => "opacity",
        10..=12 => "c_ind",
        _ if k < 13 + 3 * sh_len => "sh",
        _ => match k - 13 - 3 * sh_len {
            0 => "k_a",
            1 => "k_d",
            2 => "k_s",
            3 => "beta",
            _ => "texels",
        },
    }
}

#[test]
fn gradient_suite() {
    let _serial = serial();
    let start = Instant::now();
    let camera = CameraView::look_at(8, 8, 50.0, Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), -Vec3::y());
    let step = 1e-4;
    let mut checked = std::collections::BTreeMap::<&str, usize>::new();
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    let cases = [
        (Appearance::SphericalHarmonics, RenderMode::Shaded, LightConfig::with_direction(Vec3::new(0.4, -0.3, -1.0))),
        (Appearance::Relightable, RenderMode::Shaded, LightConfig::with_direction(Vec3::new(0.4, -0.3, -1.0))),
        (Appearance::Relightable, RenderMode::Shaded, LightConfig::headlight()),
        (Appearance::Textured, RenderMode::Shaded, LightConfig::with_direction(Vec3::new(-0.2, 0.5, -1.0))),
        (Appearance::Stylized, RenderMode::Shaded, LightConfig::headlight()),
        (Appearance::Textured, RenderMode::Depth, LightConfig::default()),
        (Appearance::Textured, RenderMode::Normal, LightConfig::default()),
    ];
    for (case, (appearance, mode, light)) in cases.into_iter().enumerate() {
        let mut scene = gradient_scene(case as u64, appearance, 4 - case % 2);
        if appearance == Appearance::Textured {
            scene.edit.opacity = 0.9;
            scene.edit.k_d = 1.2;
        }
        let options = RenderOptions::new(mode, light);
        let weights = random_targets(100 + case as u64, 8, 8);
        let (_, record) = render_with_record(&scene, &camera, &options).unwrap();
        let grads = backward(&scene, &record, &weights, Trainable::ALL).unwrap();
        let loss = |s: &BasicSceneModel| weighted_sum(&render_basic(s, &camera, &options).unwrap(), &weights);
        let mut compare = |analytic: f64, numeric: f64, class: &'static str, what: String| {
            if analytic.abs() > 1e-6 {
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
                worst = worst.max(rel);
                *checked.entry(class).or_default() += 1;
                if rel > 1e-2 {
                    failures.push(format!("{what}: {analytic} vs {numeric}"));
                }
            }
        };
        for i in 0..scene.len() {
            let analytic = grads.primitives[i].flatten();
            let sh_len = scene.primitives[i].sh.len();
            for (k, &g) in analytic.iter().enumerate() {
                let mut plus = scene.clone();
                let mut minus = scene.clone();
                *plus.primitives[i].params_mut()[k].1 += step;
                *minus.primitives[i].params_mut()[k].1 -= step;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                compare(g, numeric, attribute_class(k, sh_len), format!("case {case} prim {i} scalar {k}"));
            }
        }
        if appearance == Appearance::Textured {
            for c in 0..3 {
                let mut plus = scene.clone();
                let mut minus = scene.clone();
                plus.c_palette[c] += step;
                minus.c_palette[c] -= step;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                compare(grads.palette[c], numeric, "palette", format!("case {case} palette {c}"));
            }
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let classes = ["position", "rotation", "scale", "opacity", "c_ind", "sh", "k_a", "k_d", "k_s", "beta", "texels", "palette"];
    let missing: Vec<&str> = classes.iter().copied().filter(|c| !checked.contains_key(c)).collect();
    report(
        "gradient suite",
        failures.is_empty() && missing.is_empty() && seconds < 60.0,
        format!(
            "({} gradients over {} classes, worst relative error {worst:.2e} <= 1e-2, {seconds:.1} s < 60 s, missing {missing:?}, failures {:?})",
            checked.values().sum::<usize>(),
            checked.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    );
}

/// Ambient + diffuse + specular, written out term by term.
fn blinn_phong_oracle(
    coeffs: [f64; 4],
    base: [f64; 3],
    n: [f64; 3],
    l: [f64; 3],
    v: [f64; 3],
    intensities: [f64; 3],
    specular_color: [f64; 3],
) -> [f64; 3] {
    let [k_a, k_d, k_s, beta] = coeffs;
    let [ambient, diffuse, specular] = intensities;
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let n_dot_l = dot(n, l);
    let sum = [v[0] + l[0], v[1] + l[1], v[2] + l[2]];
    let len = dot(sum, sum).sqrt();
    let spec = if n_dot_l.abs() > 0.0 && len > 1e-12 {
        let h = sum.map(|c| c / len);
        k_s * specular * dot(n, h).abs().powf(beta)
    } else {
        0.0
    };
    let mut out = [0.0; 3];
    for c in 0..3 {
        let value = k_a * ambient * base[c] + k_d * diffuse * base[c] * n_dot_l.abs() + spec * specular_color[c];
        out[c] = value.max(0.0);
    }
    out
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len > 0.1 && len <= 1.0 {
            return v.map(|c| c / len);
        }
    }
}

#[test]
fn shading_reference() {
    let _serial = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let coeffs = [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5), rng.gen_range(0.5..64.0)];
        let base = [0; 3].map(|_| rng.gen_range(-0.3..1.2));
        let (n, l, v) = (unit(&mut rng), unit(&mut rng), unit(&mut rng));
        let intensities = [0; 3].map(|_| rng.gen_range(0.0..2.0));
        let specular_color = [0; 3].map(|_| rng.gen_range(0.0..1.0));
        let light = LightConfig {
            specular_color,
            ambient: intensities[0],
            diffuse: intensities[1],
            specular: intensities[2],
            ..LightConfig::default()
        };
        let c = ShadingCoefficients { k_a: coeffs[0], k_d: coeffs[1], k_s: coeffs[2], beta: coeffs[3] };
        let got = shade_blinn_phong(&c, &Vec3::from(base), &Vec3::from(n), &Vec3::from(l), &light, &Vec3::from(v));
        let want = blinn_phong_oracle(coeffs, base, n, l, v, intensities, specular_color);
        for ch in 0..3 {
            worst = worst.max((got[ch] - want[ch]).abs());
        }
    }
    // dyadic values keep both closed forms exact in floating point
    let c = ShadingCoefficients { k_a: 0.25, k_d: 0.5, k_s: 0.125, beta: 7.0 };
    let base = Vec3::new(0.5, 0.25, 0.75);
    let white = LightConfig::default();
    let grazing = shade_blinn_phong(&c, &base, &Vec3::z(), &Vec3::x(), &white, &Vec3::new(0.0, 0.6, 0.8));
    let aligned = shade_blinn_phong(&c, &base, &Vec3::z(), &Vec3::z(), &white, &Vec3::z());
    let grazing_exact = grazing == base * 0.25;
    let aligned_exact = aligned == base * 0.25 + base * 0.5 + Vec3::repeat(0.125);
    report(
        "shading reference",
        worst <= 1e-6 && grazing_exact && aligned_exact,
        format!("(1000 configurations, max |diff| {worst:.2e} <= 1e-6, grazing exact {grazing_exact}, aligned exact {aligned_exact})"),
    );
}

#[test]
fn memory_accounting() {
    let _serial = serial();
    let n = 47_767;
    let scene = BasicSceneModel::new(vec![SurfelPrimitive::default(); n], Appearance::Textured);
    let composed = ComposedScene::single(scene);
    let sizes = scene_file_size(&composed);
    let file_len = write_scene(&composed).unwrap().len() as u64;
    let geometry = sizes.geometry as f64 / MIB;
    let shading = sizes.shading as f64 / MIB;

    // 1000 primitives with 10x10 texels: 1e5 texels, scaled by 100 to the 1e7 budget
    let mut textured = BasicSceneModel::new(vec![SurfelPrimitive::default(); 1000], Appearance::Textured);
    for p in &mut textured.primitives {
        p.texture = Some(TextureMap::zeros(10, 10));
    }
    textured.t_total = 100_000;
    let texture_sizes = scene_file_size(&ComposedScene::single(textured));
    let texel_payload = texture_sizes.texture - 4 * 1000;
    let texture = (texel_payload * 100) as f64 / MIB;

    let pass = sizes.non_texture() == 14 * n as u64 * 4
        && (geometry - 1.82).abs() <= 0.05
        && (shading - 0.73).abs() <= 0.05
        && (texture - 114.5).abs() <= 114.5 * 0.01
        && file_len == sizes.total();
    report(
        "memory accounting",
        pass,
        format!(
            "(non-texture {} B = 14N*4 = {}, geometry {geometry:.3} MiB vs 1.82 +-0.05, shading {shading:.3} MiB vs 0.73 +-0.05, texture {texture:.2} MiB vs 114.5 +-1%)",
            sizes.non_texture(),
            14 * n * 4
        ),
    );
}

#[test]
fn texel_budget() {
    let _serial = serial();
    let mut worst_low = f64::INFINITY;
    let mut worst_high: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = rng.gen_range(1..300);
        let mut scene = random_scene(seed, count, Appearance::Relightable, rng.gen_range(0.2..3.0));
        scene.appearance = Appearance::Textured;
        scene.t_total = rng.gen_range(count as u64..count as u64 * 400);
        allocate_texels(&mut scene).unwrap();
        let ratio = scene.total_texels() as f64 / scene.t_total as f64;
        worst_low = worst_low.min(ratio);
        worst_high = worst_high.max(ratio);
    }
    report(
        "texel budget",
        worst_low >= 1.0 && worst_high <= 1.25,
        format!("(50 scenes, sum(U*V)/T_total in [{worst_low:.4}, {worst_high:.4}] within [1, 1.25])"),
    );
}

#[test]
fn synthetic_fit() {
    let _serial = serial();
    let start = Instant::now();
    let dataset = textured_sphere_dataset(&SphereDatasetOptions::default()).unwrap();
    let config = TrainConfig {
        iterations_phase1: 1_000,
        iterations_phase2: 2_000,
        iterations_texture: 500,
        initial_primitives: 500,
        texel_budget: 50_000,
        eval_interval: 0,
        ..TrainConfig::default()
    };
    let scene = fit(&dataset, &config).unwrap();
    let held_out = evaluate_psnr(&scene, dataset.test_views(), &dataset).unwrap();
    let seconds = start.elapsed().as_secs_f64();
    report(
        "synthetic fit",
        held_out >= 28.0 && seconds <= 600.0,
        format!(
            "({} views {}x{}, {} held out, {} primitives, held-out PSNR {held_out:.2} dB >= 28, {seconds:.0} s <= 600 s)",
            dataset.views.len(),
            dataset.views[0].image.width,
            dataset.views[0].image.height,
            dataset.test.len(),
            scene.len()
        ),
    );
}

fn textured_sphere() -> BasicSceneModel {
    let mut scene = surfel_sphere_scene(1500, 0.8, Appearance::Textured);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for p in &mut scene.primitives {
        randomize_texture(p.texture.as_mut().unwrap(), &mut rng, 0.2);
    }
    scene
}

fn render_views(scene: &BasicSceneModel, cameras: &[CameraView], light: &LightConfig) -> MultiViewDataset {
    let options = RenderOptions::new(RenderMode::Shaded, light.clone());
    let views = cameras
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut image = render_basic(scene, c, &options).unwrap().rgba();
            image.data.chunks_exact_mut(4).for_each(|p| p[3] = 1.0);
            View { name: format!("view{i}"), image, camera: c.clone() }
        })
        .collect();
    MultiViewDataset::new(views, Vec3::zeros(), light.clone())
}

fn geometry_maps(scene: &BasicSceneModel, cameras: &[CameraView]) -> Vec<(Image, Image, Image)> {
    cameras
        .iter()
        .map(|c| {
            let t = render_basic(scene, c, &RenderOptions::new(RenderMode::Shaded, light())).unwrap();
            (t.depth, t.normal, t.alpha)
        })
        .collect()
}

#[test]
fn npse_geometry_consistency() {
    let _serial = serial();
    let scene = textured_sphere();
    let cameras = six_view_cameras(Vec3::zeros(), 3.0, 48, 48, 40.0);
    let probes: Vec<CameraView> = (0..4).map(|i| orbit_camera(48, 48, 40.0, 3.0, 20.0 + 85.0 * i as f64, 25.0)).collect();
    let before = geometry_maps(&scene, &probes);

    let views = render_views(&scene, &cameras, &light());
    let style = Image::filled(32, 32, &[0.8, 0.3, 0.1, 1.0]);
    let image_options = ImageStyleOptions { iterations: 40, ..ImageStyleOptions::from_config(&TrainConfig::default()) };
    let styled = stylize_image(&scene, &style, &ToyExtractor::new(1), &views, &image_options, &mut |_| {}).unwrap();
    let mut edited = views.clone();
    for v in &mut edited.views {
        for px in v.image.data.chunks_exact_mut(4) {
            px[0] = (px[0] * 0.5 + 0.3).min(1.0);
        }
    }
    let text_options = TextStyleOptions { iterations: 40, ..TextStyleOptions::from_config(&TrainConfig::default()) };
    let texted = stylize_text(&scene, &edited, &text_options, &mut |_| {}).unwrap();

    let image_same = geometry_maps(&styled, &probes) == before;
    let text_same = geometry_maps(&texted, &probes) == before;
    let texels_changed = styled != scene && texted != scene;
    report(
        "NPSE geometry consistency",
        image_same && text_same && texels_changed,
        format!("(depth/normal/alpha over 4 probe views: image-driven identical {image_same}, text-driven identical {text_same})"),
    );
}

#[test]
fn identity_edit_round_trip() {
    let _serial = serial();
    let scene = textured_sphere();
    let cameras = six_view_cameras(Vec3::zeros(), 3.0, 64, 64, 40.0);
    let views = render_views(&scene, &cameras, &light());
    let options = TextStyleOptions::from_config(&TrainConfig::default());
    let out = stylize_text(&scene, &views, &options, &mut |_| {}).unwrap();
    let render_options = RenderOptions::new(RenderMode::Shaded, light());
    let scores: Vec<f64> = views
        .views
        .iter()
        .map(|v| {
            let got = render_basic(&out, &v.camera, &render_options).unwrap();
            psnr(&got.color, &composite_over(&v.image, &views.background)).unwrap()
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    report(
        "identity-edit round trip",
        min >= 35.0,
        format!("({} iterations, per-view PSNR min {min:.2} dB, mean {mean:.2} dB, need >= 35 dB)", options.iterations),
    );
}

#[test]
fn opacity_schedule_endpoints() {
    let _serial = serial();
    let mut exact = true;
    let mut monotone = true;
    for total in [3usize, 10, 100, 1500, 3001] {
        for target in [1.0, 0.37, 1.8, 0.1] {
            exact &= opacity_schedule(0, total, target) == 2.0 * target;
            exact &= opacity_schedule(total, total, target) == 0.5 * target;
            let values: Vec<f64> = (0..=total).map(|i| opacity_schedule(i, total, target)).collect();
            monotone &= values.windows(2).all(|w| w[1] <= w[0]);
        }
    }
    report(
        "opacity schedule endpoints",
        exact && monotone,
        format!("(factor(0) = 2x and factor(T) = 0.5x exactly: {exact}, non-increasing: {monotone})"),
    );
}

#[test]
fn segmentation() {
    let _serial = serial();
    let (scene, first) = two_cluster_scene(4, 40);
    let cameras = side_cameras(8, 48, 48);
    let mut cluster = scene.clone();
    cluster.primitives = scene.primitives.iter().zip(&first).filter(|(_, &f)| f).map(|(p, _)| p.clone()).collect();
    let mut masks = MaskSet::default();
    for (i, c) in cameras.iter().enumerate() {
        let alpha = render_basic(&cluster, c, &RenderOptions::default()).unwrap().alpha;
        masks.push(format!("v{i}"), c.clone(), Mask { width: c.width, height: c.height, data: alpha.data.iter().map(|&a| a > 0.0).collect() });
    }
    let labels = vote_labels(&accumulate_votes(&scene, &masks).unwrap(), &VoteParams::default());
    let correct = labels.labels.iter().zip(&first).filter(|(&l, &f)| (l == 1) == f).count();
    let accuracy = correct as f64 / scene.len() as f64;

    let whole = ComposedScene::single(scene.clone());
    let parts = split_into_composed("scene0", &scene, &labels).unwrap();
    let mut worst: f64 = 0.0;
    for c in cameras.iter().chain(&[orbit_camera(48, 48, 45.0, 3.0, 30.0, 20.0)]) {
        for mode in RenderMode::ALL {
            let options = RenderOptions::new(mode, light());
            worst = worst.max(render(&whole, c, &options).unwrap().max_abs_diff(&render(&parts, c, &options).unwrap()));
        }
    }
    report(
        "segmentation",
        accuracy == 1.0 && worst <= 1e-6,
        format!("(label accuracy {:.1}% over {} primitives, split/compose max |diff| {worst:.2e} <= 1e-6)", accuracy * 100.0, scene.len()),
    );
}

fn texgs_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_texgs")).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Renders `scene` through the CLI and returns the bytes of every image.
fn cli_render(scene: &Path, out: &Path, light_args: &[&str]) -> Vec<Vec<u8>> {
    let mut args = vec![
        "render", "--scene", s(scene), "--views", "icosphere:12", "--width", "48", "--height", "48", "--sixteen-bit",
        "--seed", "7", "--out", s(out),
    ];
    args.extend_from_slice(light_args);
    texgs_cli(&args);
    (0..12).map(|i| std::fs::read(out.join(format!("view{i:03}.png"))).unwrap()).collect()
}

fn renders_of(path: &Path, light: &LightConfig) -> Vec<RenderTargets> {
    let scene = texgs::io::load_scene(path).unwrap();
    (0..6)
        .map(|i| render(&scene, &orbit_camera(40, 40, 40.0, 3.0, 60.0 * i as f64, 20.0), &RenderOptions::new(RenderMode::Shaded, light.clone())).unwrap())
        .collect()
}

#[test]
fn pse_identities() {
    let _serial = serial();
    let dir = tempdir().unwrap();
    let base = dir.path().join("base.tgsv");
    save_basic_scene(&textured_sphere(), &base).unwrap();
    let lit = ["--light-dir", "0.3,-0.5,0.8", "--ambient", "0.45", "--diffuse", "0.7", "--specular", "0.35"];
    let cli_light = light();
    let original = cli_render(&base, &dir.path().join("r0"), &lit);
    let original_f64 = renders_of(&base, &cli_light);

    let opacity = dir.path().join("opacity.tgsv");
    texgs_cli(&["edit", "--scene", s(&base), "--out", s(&opacity), "--opacity", "1", "--seed", "7"]);
    let lighting = dir.path().join("lighting.tgsv");
    texgs_cli(&["edit", "--scene", s(&opacity), "--out", s(&lighting), "--lighting", "1,1,1,1", "--seed", "7"]);
    let opacity_same = cli_render(&opacity, &dir.path().join("r1"), &lit) == original && renders_of(&opacity, &cli_light) == original_f64;
    let lighting_same =
        cli_render(&lighting, &dir.path().join("r2"), &lit) == original && renders_of(&lighting, &cli_light) == original_f64;

    let ambient = dir.path().join("ambient.tgsv");
    texgs_cli(&["edit", "--scene", s(&base), "--out", s(&ambient), "--lighting", "1,0,0,1", "--seed", "7"]);
    let ambient_ref = cli_render(&ambient, &dir.path().join("a0"), &lit);
    let ambient_ref_f64 = renders_of(&ambient, &cli_light);
    let mut invariant = true;
    for (k, angles) in ["0,0", "75,40", "200,130", "310,180"].iter().enumerate() {
        let moved = dir.path().join(format!("moved{k}.tgsv"));
        texgs_cli(&["edit", "--scene", s(&ambient), "--out", s(&moved), "--light-angles", angles, "--seed", "7"]);
        invariant &= cli_render(&moved, &dir.path().join(format!("a{}", k + 1)), &lit) == ambient_ref;
        invariant &= renders_of(&moved, &cli_light) == ambient_ref_f64;
    }
    let headlight = cli_render(&ambient, &dir.path().join("ah"), &["--headlight", "--ambient", "0.45", "--diffuse", "0.7", "--specular", "0.35"]);
    invariant &= headlight == ambient_ref;
    report(
        "PSE identities",
        opacity_same && lighting_same && invariant,
        format!("(over the CLI, 12 views: opacity x1 identical {opacity_same}, lighting x1 identical {lighting_same}, ambient-only light invariant {invariant})"),
    );
}

#[test]
fn serialization() {
    let _serial = serial();
    let mut identical = 0;
    let mut with_texture = 0;
    let mut with_sh = 0;
    for seed in 0..50u64 {
        let appearance = APPEARANCES[seed as usize % 4];
        let mut scene = random_scene(5000 + seed, 1 + (seed as usize * 13) % 60, appearance, 1.5);
        scene.edit.opacity = 0.75;
        if seed % 3 == 0 {
            scene.edit.palette = Some([0.1, 0.2, 0.3]);
        }
        let composed = ComposedScene::single(scene.clone());
        let bytes = write_scene(&composed).unwrap();
        let back = read_scene(&bytes).unwrap();
        let again = write_scene(&back).unwrap();
        if *back.entries[0].scene == scene && again == bytes && bytes.len() as u64 == scene_file_size(&composed).total() {
            identical += 1;
        }
        with_texture += usize::from(scene.total_texels() > 0);
        with_sh += usize::from(scene.sh_degree.is_some());
    }
    report(
        "serialization",
        identical == 50 && with_texture > 0 && with_sh > 0,
        format!("({identical}/50 scenes bit-identical after write/read/write, {with_texture} with textures, {with_sh} with SH)"),
    );
}

#[test]
fn interactive_rate() {
    let _serial = serial();
    let scene = ComposedScene::single(surfel_sphere_scene(10_000, 0.8, Appearance::Textured));
    let camera = orbit_camera(256, 256, 40.0, 3.0, 30.0, 20.0);
    let options = RenderOptions::new(RenderMode::Shaded, light());
    render(&scene, &camera, &options).unwrap();
    let mut frame_ms: Vec<f64> = (0..30)
        .map(|_| {
            let start = Instant::now();
            render(&scene, &camera, &options).unwrap();
            start.elapsed().as_secs_f64() * 1000.0
        })
        .collect();
    frame_ms.sort_by(f64::total_cmp);
    let median = frame_ms[frame_ms.len() / 2];
    let fps = 1000.0 / median;
    report(
        "interactive rate",
        fps >= 10.0,
        format!(
            "(10k primitives at 256x256: {fps:.1} FPS >= 10 from the median of 30 frames, {median:.1} ms, fastest {:.1} ms, {} threads)",
            frame_ms[0],
            rayon_threads()
        ),
    );
}

fn rayon_threads() -> usize {
    rayon::current_num_threads()
}
