use super::*;
use crate::camera::CameraView;
use crate::math::Vec3;
use crate::render::{render, render_basic, RenderMode, RenderOptions, RenderTargets};
use crate::scene::{compose, Appearance};
use crate::synthetic::{orbit_camera, random_scene};

fn camera() -> CameraView {
    orbit_camera(24, 20, 50.0, 4.0, 30.0, 20.0)
}

fn shaded() -> RenderOptions {
    RenderOptions::new(RenderMode::Shaded, LightConfig::with_direction(Vec3::new(0.2, 0.5, 1.0)))
}

fn draw(scene: &BasicSceneModel) -> RenderTargets {
    render_basic(scene, &camera(), &shaded()).unwrap()
}

fn edited(scene: &BasicSceneModel, edits: &[PseEdit]) -> BasicSceneModel {
    let mut s = scene.clone();
    for e in edits {
        apply_edit(&mut s, e).unwrap();
    }
    s
}

#[test]
fn identity_factors_are_bit_exact() {
    for appearance in [Appearance::Relightable, Appearance::Textured, Appearance::Stylized] {
        let scene = random_scene(11, 12, appearance, 1.0);
        let base = draw(&scene);
        let same = [
            PseEdit::ScaleOpacity { factor: 1.0 },
            PseEdit::ScaleLighting { k_a: 1.0, k_d: 1.0, k_s: 1.0, beta: 1.0 },
        ];
        for e in &same {
            assert_eq!(draw(&edited(&scene, std::slice::from_ref(e))), base, "{e:?}");
        }
    }
}

#[test]
fn ambient_only_scene_ignores_light_direction() {
    let scene = random_scene(12, 12, Appearance::Textured, 1.0);
    let ambient = edited(&scene, &[PseEdit::ScaleLighting { k_a: 1.0, k_d: 0.0, k_s: 0.0, beta: 1.0 }]);
    let base = draw(&ambient);
    for (az, polar) in [(0.0, 0.0), (45.0, 60.0), (200.0, 120.0), (310.0, 179.0)] {
        let moved = edited(&ambient, &[PseEdit::SetLightDirection { azimuth_deg: az, polar_deg: polar }]);
        assert_eq!(draw(&moved), base);
    }
}

#[test]
fn palette_shift_moves_premultiplied_color_by_alpha() {
    let mut scene = random_scene(13, 10, Appearance::Textured, 1.0);
    for p in &mut scene.primitives {
        p.k_a = 1.0;
        p.k_d = 0.0;
        p.k_s = 0.0;
        if let Some(t) = p.texture.as_mut() {
            t.texels.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let options = RenderOptions::new(RenderMode::Shaded, LightConfig { ambient: 1.0, ..Default::default() });
    let before = render_basic(&scene, &camera(), &options).unwrap();
    let delta = Vec3::new(0.1, -0.05, 0.2);
    let target = scene.c_palette + delta;
    let after_scene = edited(&scene, &[PseEdit::SetPalette { rgb: [target.x, target.y, target.z] }]);
    let after = render_basic(&after_scene, &camera(), &options).unwrap();
    for i in 0..before.alpha.data.len() {
        let a = before.alpha.data[i];
        for c in 0..3 {
            let shift = after.color.data[i * 3 + c] - before.color.data[i * 3 + c];
            assert!((shift - delta[c] * a).abs() < 1e-5);
        }
    }
}

#[test]
fn inverse_edits_restore_the_image() {
    let scene = random_scene(14, 12, Appearance::Textured, 1.0);
    let base = draw(&scene);
    let cases: Vec<(PseEdit, PseEdit)> = vec![
        (PseEdit::ScaleOpacity { factor: 2.5 }, PseEdit::ScaleOpacity { factor: 0.4 }),
        (
            PseEdit::ScaleLighting { k_a: 2.0, k_d: 0.5, k_s: 4.0, beta: 0.25 },
            PseEdit::ScaleLighting { k_a: 0.5, k_d: 2.0, k_s: 0.25, beta: 4.0 },
        ),
        (PseEdit::SetPalette { rgb: [0.9, 0.1, 0.3] }, {
            let c = scene.c_palette;
            PseEdit::SetPalette { rgb: [c.x, c.y, c.z] }
        }),
    ];
    for (e, inv) in cases {
        let back = draw(&edited(&scene, &[e.clone(), inv]));
        assert!(back.max_abs_diff(&base) <= 1e-6, "{e:?}");
    }
    let lit = edited(&scene, &[PseEdit::SetLightDirection { azimuth_deg: 10.0, polar_deg: 30.0 }]);
    let lit_base = draw(&lit);
    let round = edited(
        &lit,
        &[PseEdit::SetLightDirection { azimuth_deg: 100.0, polar_deg: 80.0 }, PseEdit::SetLightDirection { azimuth_deg: 10.0, polar_deg: 30.0 }],
    );
    assert_eq!(draw(&round), lit_base);
}

#[test]
fn edits_never_touch_trained_parameters() {
    let scene = random_scene(15, 8, Appearance::Textured, 1.0);
    let all = [
        PseEdit::SetPalette { rgb: [0.1, 0.2, 0.3] },
        PseEdit::ScaleOpacity { factor: 0.0 },
        PseEdit::ScaleLighting { k_a: 3.0, k_d: 0.0, k_s: 2.0, beta: 5.0 },
        PseEdit::SetLightDirection { azimuth_deg: 90.0, polar_deg: 45.0 },
    ];
    let after = edited(&scene, &all);
    assert_eq!(after.primitives, scene.primitives);
    assert_eq!(after.c_palette, scene.c_palette);
    assert!(!after.edit.is_identity());
}

#[test]
fn light_and_palette_edits_commute() {
    let scene = random_scene(16, 12, Appearance::Textured, 1.0);
    let a = PseEdit::SetLightDirection { azimuth_deg: 70.0, polar_deg: 50.0 };
    let b = PseEdit::SetPalette { rgb: [0.3, 0.6, 0.2] };
    assert_eq!(draw(&edited(&scene, &[a.clone(), b.clone()])), draw(&edited(&scene, &[b, a])));
}

#[test]
fn invalid_factors_are_rejected() {
    let mut scene = random_scene(17, 3, Appearance::Textured, 1.0);
    for e in [
        PseEdit::ScaleOpacity { factor: -1.0 },
        PseEdit::ScaleOpacity { factor: f64::NAN },
        PseEdit::ScaleLighting { k_a: 1.0, k_d: f64::INFINITY, k_s: 1.0, beta: 1.0 },
        PseEdit::SetPalette { rgb: [0.0, f64::NAN, 0.0] },
        PseEdit::SetLightDirection { azimuth_deg: f64::NAN, polar_deg: 0.0 },
    ] {
        assert!(matches!(apply_edit(&mut scene, &e), Err(Error::InvalidParameter(_))));
    }
    assert!(scene.edit.is_identity());
}

#[test]
fn commands_address_one_entry() {
    let a = random_scene(18, 6, Appearance::Textured, 1.0);
    let b = random_scene(19, 6, Appearance::Textured, 1.0);
    let mut composed = compose(vec![Arc::new(a.clone()), Arc::new(b.clone())]);
    let cmd = PseCommand { target: "scene1".into(), segment: None, edit: PseEdit::ScaleOpacity { factor: 0.0 } };
    apply_pse(&mut composed, &cmd).unwrap();
    assert!(composed.entries[0].scene.edit.is_identity());
    assert_eq!(composed.entries[1].scene.edit.opacity, 0.0);
    // the hidden entry now renders like the other alone
    let cam = camera();
    let alone = render(&ComposedScene::single(a), &cam, &shaded()).unwrap();
    assert!(render(&composed, &cam, &shaded()).unwrap().max_abs_diff(&alone) < 1e-12);

    let by_index = PseCommand { target: "0".into(), segment: None, edit: PseEdit::ScaleOpacity { factor: 0.5 } };
    apply_pse(&mut composed, &by_index).unwrap();
    assert_eq!(composed.entries[0].scene.edit.opacity, 0.5);

    let missing = PseCommand { target: "nope".into(), segment: None, edit: PseEdit::ScaleOpacity { factor: 1.0 } };
    assert!(matches!(apply_pse(&mut composed, &missing), Err(Error::UnknownTarget(_))));
    let bad_segment = PseCommand { target: "scene0".into(), segment: Some(4), edit: PseEdit::ScaleOpacity { factor: 1.0 } };
    assert!(matches!(apply_pse(&mut composed, &bad_segment), Err(Error::UnknownTarget(_))));
}

#[test]
fn commands_round_trip_through_json() {
    let cmd = PseCommand {
        target: "scene0".into(),
        segment: Some(2),
        edit: PseEdit::ScaleLighting { k_a: 1.0, k_d: 0.5, k_s: 0.0, beta: 2.0 },
    };
    let text = serde_json::to_string(&cmd).unwrap();
    assert!(text.contains("\"op\":\"scale_lighting\""));
    assert_eq!(serde_json::from_str::<PseCommand>(&text).unwrap(), cmd);
}
