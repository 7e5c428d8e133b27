use super::*;
use crate::dataset::View;
use crate::edit::features::ToyExtractor;
use crate::render::render_basic;
use crate::scene::LightConfig;
use crate::synthetic::surfel_sphere_scene;

fn light() -> LightConfig {
    LightConfig { direction: [0.3, -0.4, 0.87], ambient: 0.5, diffuse: 0.5, specular: 0.3, ..Default::default() }
}

fn scene() -> BasicSceneModel {
    surfel_sphere_scene(300, 0.8, Appearance::Textured)
}

fn options() -> RenderOptions {
    RenderOptions { mode: RenderMode::Shaded, light: light(), background: Vec3::zeros() }
}

/// Views of `scene` rendered from `cameras`, stored as opaque RGBA.
fn rendered_views(scene: &BasicSceneModel, cameras: Vec<CameraView>) -> MultiViewDataset {
    let views = cameras
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            let out = render_basic(scene, &camera, &options()).unwrap();
            let mut image = Image::new(camera.width, camera.height, 4);
            for (dst, src) in image.data.chunks_exact_mut(4).zip(out.color.data.chunks_exact(3)) {
                dst.copy_from_slice(&[src[0], src[1], src[2], 1.0]);
            }
            View { name: format!("v{i}"), image, camera }
        })
        .collect();
    MultiViewDataset::new(views, Vec3::zeros(), light())
}

fn six(size: usize) -> Vec<CameraView> {
    six_view_cameras(Vec3::zeros(), 3.0, size, size, 45.0)
}

fn image_options(iterations: usize) -> ImageStyleOptions {
    ImageStyleOptions { iterations, eval_interval: 0, ..ImageStyleOptions::from_config(&TrainConfig::default()) }
}

fn text_options(iterations: usize) -> TextStyleOptions {
    TextStyleOptions { iterations, eval_interval: 0, ..TextStyleOptions::from_config(&TrainConfig::default()) }
}

#[test]
fn opacity_schedule_shape() {
    let total = 1500;
    assert_eq!(opacity_schedule(0, total, 0.8), 1.6);
    assert_eq!(opacity_schedule(total, total, 0.8), 0.4);
    let seq: Vec<f64> = (0..=total).map(|i| opacity_schedule(i, total, 1.0)).collect();
    assert!(seq.windows(2).all(|w| w[1] <= w[0]));
    let mut plateaus = seq.clone();
    plateaus.dedup();
    assert_eq!(plateaus, vec![2.0, 1.0, 0.5]);
    assert_eq!(opacity_schedule(499, total, 1.0), 2.0);
    assert_eq!(opacity_schedule(500, total, 1.0), 1.0);
    assert_eq!(opacity_schedule(1000, total, 1.0), 0.5);
}

#[test]
fn stylized_conversion_keeps_the_render() {
    let s = scene();
    let cam = six(24).remove(0);
    let before = render_basic(&s, &cam, &options()).unwrap();
    let st = to_stylized(&s).unwrap();
    assert_eq!(st.appearance, Appearance::Stylized);
    let d = render_basic(&st, &cam, &options()).unwrap().color.max_abs_diff(&before.color);
    assert!(d < 1e-12, "{d}");
    // the palette no longer matters
    let mut recolored = st.clone();
    recolored.edit.palette = Some([1.0, 0.0, 0.0]);
    assert_eq!(render_basic(&recolored, &cam, &options()).unwrap(), render_basic(&st, &cam, &options()).unwrap());
    let plain = surfel_sphere_scene(10, 1.0, Appearance::Relightable);
    assert!(to_stylized(&plain).is_err());
}

#[test]
fn rerandomized_texels_stay_near_the_base() {
    let mut s = scene();
    rerandomize_texels(&mut s, &mut ChaCha8Rng::seed_from_u64(1));
    let all: Vec<f64> = s.primitives.iter().flat_map(|p| p.texture.as_ref().unwrap().texels.clone()).collect();
    assert!(all.iter().all(|t| t.abs() < RERANDOMIZE_AMPLITUDE));
    assert!(all.iter().any(|t| *t != 0.0));
}

#[test]
fn style_weight_endpoints_drop_the_other_term() {
    let ex = ToyExtractor::new(3);
    let cams = six(20);
    let s = to_stylized(&scene()).unwrap();
    let render = render_basic(&s, &cams[0], &options()).unwrap().color;
    let style_img = render_basic(&s, &cams[2], &options()).unwrap().color;
    let style = ex.forward(&style_img).unwrap();
    let feats = ex.forward(&render).unwrap();

    let (_, g_nnfm) = nnfm_loss(&feats.maps, &style.maps).unwrap();
    let only_nnfm = ex.backward(&render, &Features { maps: g_nnfm, embedding: vec![0.0; feats.embedding.len()] }).unwrap();
    let (_, at_one) = image_style_loss(&render, &style, &ex, 1.0).unwrap();
    assert_eq!(at_one, only_nnfm);

    let (_, g_global) = global_style_loss(&feats.embedding, &style.embedding).unwrap();
    let only_global = ex.backward(&render, &Features { maps: feats.zeros_like().maps, embedding: g_global }).unwrap();
    let (_, at_zero) = image_style_loss(&render, &style, &ex, 0.0).unwrap();
    assert_eq!(at_zero, only_global);
}

#[test]
fn self_style_is_a_fixed_point() {
    let s = scene();
    let cam = six(24).remove(3);
    let stylized = to_stylized(&s).unwrap();
    let style = render_basic(&stylized, &cam, &options()).unwrap().color;
    let views = rendered_views(&s, vec![cam]);
    let ex = ToyExtractor::new(0);
    let mut losses = Vec::new();
    let opts = ImageStyleOptions { rerandomize: false, eval_interval: 1, ..image_options(50) };
    let out = stylize_image(&s, &style, &ex, &views, &opts, &mut |r| losses.push(r.loss_total)).unwrap();
    assert!(losses[0] < 1e-12);
    let drift = out
        .primitives
        .iter()
        .zip(&stylized.primitives)
        .flat_map(|(a, b)| {
            let (ta, tb) = (a.texture.as_ref().unwrap(), b.texture.as_ref().unwrap());
            ta.texels.iter().zip(&tb.texels).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    assert!(drift <= 1e-3, "drift {drift}");
}

fn geometry_maps(scene: &BasicSceneModel, cams: &[CameraView]) -> Vec<(Image, Image)> {
    cams.iter()
        .map(|c| {
            let t = render_basic(scene, c, &options()).unwrap();
            (t.depth, t.normal)
        })
        .collect()
}

#[test]
fn image_stylization_keeps_geometry() {
    let s = scene();
    let cams = six(20);
    let views = rendered_views(&s, cams.clone());
    let ex = ToyExtractor::new(5);
    let mut style = Image::new(16, 16, 3);
    for (i, v) in style.data.iter_mut().enumerate() {
        *v = if (i / 3 / 4) % 2 == 0 { 0.9 } else { 0.1 };
    }
    let out = stylize_image(&s, &style, &ex, &views, &image_options(20), &mut |_| {}).unwrap();
    assert_eq!(geometry_maps(&out, &cams), geometry_maps(&s, &cams));
    assert_ne!(render_basic(&out, &cams[0], &options()).unwrap().color, render_basic(&s, &cams[0], &options()).unwrap().color);
    for (a, b) in out.primitives.iter().zip(&s.primitives) {
        assert_eq!((a.mu, a.rot, a.log_scale, a.opacity_logit), (b.mu, b.rot, b.log_scale, b.opacity_logit));
        assert_eq!((a.k_a, a.k_d, a.k_s, a.beta), (b.k_a, b.k_d, b.k_s, b.beta));
    }
}

#[test]
fn identity_text_edit_round_trips() {
    let s = scene();
    let cams = six(24);
    let views = rendered_views(&s, cams.clone());
    let out = stylize_text(&s, &views, &text_options(300), &mut |_| {}).unwrap();
    assert_eq!(geometry_maps(&out, &cams), geometry_maps(&s, &cams));
    assert_eq!(out.edit, s.edit);
    // texels end up fitted to the last plateau of the opacity schedule
    let mut last = out.clone();
    last.edit.opacity = opacity_schedule(300, 300, s.edit.opacity);
    for (i, c) in cams.iter().enumerate() {
        let want = composite_over(&views.views[i].image, &Vec3::zeros());
        let plateau = psnr(&render_basic(&last, c, &options()).unwrap().color, &want).unwrap();
        assert!(plateau >= 35.0, "view {i}: {plateau} dB");
    }
}

#[test]
fn hue_shift_transfers_to_novel_views() {
    let s = scene();
    let mut views = rendered_views(&s, six(24));
    for v in &mut views.views {
        for px in v.image.data.chunks_exact_mut(4) {
            px[0] = (px[0] + 0.15).min(1.0);
            px[2] = (px[2] - 0.15).max(0.0);
        }
    }
    let out = stylize_text(&s, &views, &text_options(300), &mut |_| {}).unwrap();
    let novel = crate::synthetic::orbit_camera(24, 24, 45.0, 3.0, 37.0, 28.0);
    let before = render_basic(&s, &novel, &options()).unwrap();
    let after = render_basic(&out, &novel, &options()).unwrap();
    let (mut agree, mut total) = (0, 0);
    for i in 0..before.alpha.data.len() {
        if before.alpha.data[i] <= 0.5 {
            continue;
        }
        total += 1;
        let dr = after.color.data[i * 3] - before.color.data[i * 3];
        let db = after.color.data[i * 3 + 2] - before.color.data[i * 3 + 2];
        if dr > 0.0 && db < 0.0 {
            agree += 1;
        }
    }
    assert!(total > 50);
    assert!(agree as f64 >= 0.9 * total as f64, "{agree}/{total}");
}

#[test]
fn text_edit_with_zero_iterations_is_a_no_op() {
    let s = scene();
    let views = rendered_views(&s, six(16));
    assert_eq!(stylize_text(&s, &views, &text_options(0), &mut |_| {}).unwrap(), s);
}

#[test]
fn text_edit_preconditions() {
    let s = scene();
    let mut five = rendered_views(&s, six(16));
    five.views.pop();
    five.train.pop();
    assert!(matches!(stylize_text(&s, &five, &text_options(5), &mut |_| {}), Err(Error::InvalidParameter(_))));

    let mut away = six(16);
    away[1] = CameraView::look_at(16, 16, 45.0, Vec3::new(0.0, 3.0, 0.0), Vec3::new(0.0, 6.0, 0.0), Vec3::z());
    let away = rendered_views(&s, away);
    assert!(matches!(stylize_text(&s, &away, &text_options(5), &mut |_| {}), Err(Error::InvalidParameter(_))));

    let plain = surfel_sphere_scene(20, 0.8, Appearance::Relightable);
    let views = rendered_views(&s, six(16));
    assert!(stylize_text(&plain, &views, &text_options(5), &mut |_| {}).is_err());
}

#[test]
fn text_edit_rerandomize_flag_changes_start() {
    let s = scene();
    let views = rendered_views(&s, six(16));
    let opts = TextStyleOptions { rerandomize: true, ..text_options(1) };
    let out = stylize_text(&s, &views, &opts, &mut |_| {}).unwrap();
    let t = &out.primitives[0].texture.as_ref().unwrap().texels;
    assert!(t.iter().all(|v| v.abs() < RERANDOMIZE_AMPLITUDE + 0.05));
}
