use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;

use texgs::camera::CameraView;
use texgs::edit::features::ToyExtractor;
use texgs::edit::stylize::{stylize_image, stylize_text, ImageStyleOptions, TextStyleOptions};
use texgs::edit::{apply_pse, PseCommand, PseEdit};
use texgs::image::{psnr, Image};
use texgs::io::{self, BitDepth, DatasetManifest};
use texgs::math::Vec3;
use texgs::render::{render, RenderMode, RenderOptions, RenderTargets};
use texgs::scene::{ComposedScene, LightConfig};
use texgs::segment::{accumulate_votes, split_into_composed, LabelAssignment, VoteParams};
use texgs::train::cameras::icosphere_cameras;
use texgs::train::fit::{fit_with_log, evaluate_psnr};
use texgs::train::loss::composite_over;
use texgs::train::ssim::ssim;

use crate::Command;

/// Invalid combination of otherwise well-formed arguments.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn emit(record: serde_json::Value) {
    println!("{record}");
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit { dataset, out, config } => {
            let config = config.resolve().context("fit")?;
            let data = io::load_dataset(&dataset).with_context(|| format!("fit: loading {}", dataset.display()))?;
            let start = Instant::now();
            let (scene, _) = fit_with_log(&data, &config, &mut |r| println!("{}", r.to_json_line())).context("fit")?;
            let held_out = if data.test.is_empty() { data.train_views().collect::<Vec<_>>() } else { data.test_views().collect() };
            let psnr = evaluate_psnr(&scene, held_out.into_iter(), &data).context("fit: evaluation")?;
            io::save_basic_scene(&scene, &out).with_context(|| format!("fit: writing {}", out.display()))?;
            emit(json!({
                "event": "done",
                "primitives": scene.len(),
                "texels": scene.total_texels(),
                "psnr": psnr,
                "seconds": start.elapsed().as_secs_f64(),
                "out": out,
            }));
            Ok(())
        }
        Command::Render { scene, views, out, mode, reference, radius, center, width, height, fov, sixteen_bit, light, seed: _ } => {
            let composed = io::load_scene(&scene).with_context(|| format!("render: loading {}", scene.display()))?;
            let sweep = Sweep { radius, center: Vec3::from(center), width, height, fov };
            let (cameras, manifest) = cameras_for(&views, &sweep).context("render")?;
            let base_light = manifest.as_ref().and_then(|m| m.light.clone()).unwrap_or_default();
            let base_background = manifest.as_ref().map(|m| Vec3::from(m.background)).unwrap_or_else(Vec3::zeros);
            let options = RenderOptions {
                mode: mode.render_mode(),
                light: light.light(base_light),
                background: light.background(base_background),
            };
            // a dataset passed as --views doubles as the reference once its images exist
            let reference = reference.or_else(|| {
                let dir = PathBuf::from(&views);
                let manifest = manifest.as_ref()?;
                manifest.frames.iter().all(|f| dir.join(&f.file_path).is_file()).then_some(dir)
            });
            let references = match &reference {
                Some(dir) => Some(load_references(dir).with_context(|| format!("render: references in {}", dir.display()))?),
                None => None,
            };
            std::fs::create_dir_all(&out).with_context(|| format!("render: creating {}", out.display()))?;
            let (mut psnr_sum, mut ssim_sum, mut compared) = (0.0, 0.0, 0usize);
            for (name, camera) in &cameras {
                let start = Instant::now();
                let targets = render(&composed, camera, &options).with_context(|| format!("render: view {name}"))?;
                let millis = start.elapsed().as_secs_f64() * 1e3;
                let file = out.join(format!("{name}.png"));
                write_render(&targets, mode.render_mode(), &options.background, &file, sixteen_bit)
                    .with_context(|| format!("render: writing {}", file.display()))?;
                let mut record = json!({"view": name, "file": file, "mode": mode.name(), "milliseconds": millis});
                let found = references.as_ref().and_then(|r| r.iter().find(|(n, _)| n == name));
                if let (Some((_, image)), RenderMode::Shaded | RenderMode::FlatTexture) = (found, options.mode) {
                    let want = composite_over(image, &options.background);
                    let p = psnr(&targets.color, &want).with_context(|| format!("render: comparing view {name}"))?;
                    let s = ssim(&targets.color, &want);
                    record["psnr"] = json!(p);
                    record["ssim"] = json!(s);
                    psnr_sum += p;
                    ssim_sum += s;
                    compared += 1;
                }
                emit(record);
            }
            let mut summary = json!({"event": "summary", "images": cameras.len()});
            if compared > 0 {
                summary["mean_psnr"] = json!(psnr_sum / compared as f64);
                summary["mean_ssim"] = json!(ssim_sum / compared as f64);
            }
            emit(summary);
            Ok(())
        }
        Command::Edit { io: files, target, opacity, lighting, palette, light_angles, absolute, seed: _ } => {
            let mut composed = io::load_scene(&files.scene).with_context(|| format!("edit: loading {}", files.scene.display()))?;
            let mut edits = Vec::new();
            if let Some(factor) = opacity {
                edits.push(PseEdit::ScaleOpacity { factor });
            }
            if let Some([k_a, k_d, k_s, beta]) = lighting {
                edits.push(PseEdit::ScaleLighting { k_a, k_d, k_s, beta });
            }
            if let Some(rgb) = palette {
                edits.push(PseEdit::SetPalette { rgb });
            }
            if let Some(a) = light_angles {
                let [azimuth_deg, polar_deg] = a;
                edits.push(PseEdit::SetLightDirection { azimuth_deg, polar_deg });
            }
            if edits.is_empty() {
                return Err(UsageError("edit: no edit given (use --opacity, --lighting, --palette or --light-angles)".into()).into());
            }
            for edit in edits {
                if absolute {
                    let index = composed.find(&target.target, target.segment).context("edit")?;
                    edit.validate().context("edit")?;
                    let entry = &mut composed.entries[index];
                    let state = &mut Arc::make_mut(&mut entry.scene).edit;
                    match edit {
                        PseEdit::ScaleOpacity { factor } => state.opacity = factor,
                        PseEdit::ScaleLighting { k_a, k_d, k_s, beta } => {
                            (state.k_a, state.k_d, state.k_s, state.beta) = (k_a, k_d, k_s, beta)
                        }
                        other => *state = other.applied_to(state),
                    }
                } else {
                    let cmd = PseCommand { target: target.target.clone(), segment: target.segment, edit };
                    apply_pse(&mut composed, &cmd).context("edit")?;
                }
            }
            io::save_scene(&composed, &files.out).with_context(|| format!("edit: writing {}", files.out.display()))?;
            let index = composed.find(&target.target, target.segment)?;
            emit(json!({"event": "done", "entry": composed.entries[index].name, "edit": composed.entries[index].scene.edit}));
            Ok(())
        }
        Command::StylizeImage { io: files, target, style, dataset, config } => {
            let config = config.resolve().context("stylize-image")?;
            let options = ImageStyleOptions::from_config(&config);
            let mut composed = io::load_scene(&files.scene).with_context(|| format!("stylize-image: loading {}", files.scene.display()))?;
            let index = composed.find(&target.target, target.segment).context("stylize-image")?;
            let style_image = io::load_png(&style).with_context(|| format!("stylize-image: style {}", style.display()))?;
            let views = io::load_dataset(&dataset).with_context(|| format!("stylize-image: loading {}", dataset.display()))?;
            let extractor = ToyExtractor::new(options.seed);
            let source = composed.entries[index].scene.clone();
            let out = stylize_image(&source, &style_image, &extractor, &views, &options, &mut |r| println!("{}", r.to_json_line()))
                .context("stylize-image")?;
            composed.entries[index].scene = Arc::new(out);
            io::save_scene(&composed, &files.out).with_context(|| format!("stylize-image: writing {}", files.out.display()))?;
            emit(json!({"event": "done", "out": files.out}));
            Ok(())
        }
        Command::StylizeText { io: files, target, views, config } => {
            let config = config.resolve().context("stylize-text")?;
            let options = TextStyleOptions::from_config(&config);
            let mut composed = io::load_scene(&files.scene).with_context(|| format!("stylize-text: loading {}", files.scene.display()))?;
            let index = composed.find(&target.target, target.segment).context("stylize-text")?;
            let edited = io::load_dataset(&views).with_context(|| format!("stylize-text: loading {}", views.display()))?;
            let source = composed.entries[index].scene.clone();
            let out = stylize_text(&source, &edited, &options, &mut |r| println!("{}", r.to_json_line())).context("stylize-text")?;
            composed.entries[index].scene = Arc::new(out);
            io::save_scene(&composed, &files.out).with_context(|| format!("stylize-text: writing {}", files.out.display()))?;
            emit(json!({"event": "done", "out": files.out}));
            Ok(())
        }
        Command::Segment { scene, target, dataset, masks, out, split, config } => {
            let config = config.resolve().context("segment")?;
            let params = VoteParams { threshold_ratio: config.segment_threshold, min_view_fraction: config.segment_min_view_fraction };
            let composed = io::load_scene(&scene).with_context(|| format!("segment: loading {}", scene.display()))?;
            let index = composed.find(&target.target, target.segment).context("segment")?;
            let entry = &composed.entries[index];
            let views = io::load_dataset(&dataset).with_context(|| format!("segment: loading {}", dataset.display()))?;
            let mut labels = LabelAssignment::unlabeled(entry.scene.len());
            for (k, dir) in masks.iter().enumerate() {
                let set = io::load_masks(dir, &views).with_context(|| format!("segment: masks in {}", dir.display()))?;
                let stats = accumulate_votes(&entry.scene, &set).context("segment")?;
                labels.vote(&stats, k as u32 + 1, &params).context("segment")?;
            }
            io::save_labels(&labels, &out).with_context(|| format!("segment: writing {}", out.display()))?;
            for k in 0..=masks.len() as u32 {
                emit(json!({"label": k, "primitives": labels.count(k)}));
            }
            if let Some(path) = split {
                let parts = split_into_composed(&entry.name, &entry.scene, &labels).context("segment")?;
                io::save_scene(&parts, &path).with_context(|| format!("segment: writing {}", path.display()))?;
            }
            Ok(())
        }
        Command::Compose { inputs, out, labels, target, seed: _ } => {
            let mut composed = ComposedScene::default();
            for (i, path) in inputs.iter().enumerate() {
                let mut part = io::load_scene(path).with_context(|| format!("compose: loading {}", path.display()))?;
                if let (0, Some(table)) = (i, &labels) {
                    part = split_entry(part, &target, table).context("compose")?;
                }
                composed.append(part);
            }
            io::save_scene(&composed, &out).with_context(|| format!("compose: writing {}", out.display()))?;
            for e in &composed.entries {
                emit(json!({"entry": e.name, "segment": e.segment, "visible": e.visible, "primitives": e.scene.len()}));
            }
            Ok(())
        }
        Command::Cameras { count, radius, center, width, height, fov, out, light, seed: _ } => {
            let cams = icosphere_cameras(count, radius, Vec3::from(center), width, height, fov).context("cameras")?;
            let named: Vec<(String, CameraView)> = cams.into_iter().enumerate().map(|(i, c)| (view_name(i), c)).collect();
            let manifest = DatasetManifest::from_cameras(&named, light.background(Vec3::zeros()), Some(light.light(LightConfig::default())))
                .context("cameras")?;
            manifest.write(&out).with_context(|| format!("cameras: writing {}", out.display()))?;
            emit(json!({"event": "done", "cameras": named.len(), "manifest": out.join(io::MANIFEST_FILE)}));
            Ok(())
        }
        Command::Serve { scene, bind, port, light, config } => {
            let config = config.resolve().context("serve")?;
            let mut composed = ComposedScene::default();
            for path in &scene {
                composed.append(io::load_scene(path).with_context(|| format!("serve: loading {}", path.display()))?);
            }
            let hub = texgs_server::Hub::with_config(composed, light.light(LightConfig::default()), light.background(Vec3::zeros()), config);
            let server = texgs_server::Server::bind((bind.as_str(), port), hub).with_context(|| format!("serve: binding {bind}:{port}"))?;
            emit(json!({"event": "listening", "addr": server.local_addr()?.to_string()}));
            server.run().context("serve")?;
            Ok(())
        }
    }
}

fn view_name(i: usize) -> String {
    format!("view{i:03}")
}

struct Sweep {
    radius: f64,
    center: Vec3,
    width: usize,
    height: usize,
    fov: f64,
}

fn cameras_for(spec: &str, sweep: &Sweep) -> Result<(Vec<(String, CameraView)>, Option<DatasetManifest>)> {
    if let Some(count) = spec.strip_prefix("icosphere:") {
        let count: usize = count.parse().map_err(|_| UsageError(format!("bad view count in `{spec}`")))?;
        let cams = icosphere_cameras(count, sweep.radius, sweep.center, sweep.width, sweep.height, sweep.fov)?;
        return Ok((cams.into_iter().enumerate().map(|(i, c)| (view_name(i), c)).collect(), None));
    }
    let manifest = io::load_manifest(spec)?;
    Ok((manifest.cameras(), Some(manifest)))
}

fn load_references(dir: &Path) -> Result<Vec<(String, Image)>> {
    let data = io::load_dataset(dir)?;
    Ok(data.views.into_iter().map(|v| (v.name, v.image)).collect())
}

/// Straight-alpha RGBA: the rendered color with the background removed.
fn straight_rgba(targets: &RenderTargets, background: &Vec3) -> Image {
    let mut out = targets.rgba();
    for px in out.data.chunks_exact_mut(4) {
        let a = px[3];
        for c in 0..3 {
            px[c] = if a > 1e-8 { ((px[c] - background[c] * (1.0 - a)) / a).clamp(0.0, 1.0) } else { 0.0 };
        }
    }
    out
}

fn write_render(targets: &RenderTargets, mode: RenderMode, background: &Vec3, path: &Path, sixteen_bit: bool) -> Result<()> {
    match mode {
        RenderMode::Normal | RenderMode::Depth => {
            let bytes = texgs_server::frame::encode_rgba8(targets, mode);
            image::save_buffer(path, &bytes, targets.width() as u32, targets.height() as u32, image::ExtendedColorType::Rgba8)?;
        }
        _ => {
            let depth = if sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
            io::save_png(&straight_rgba(targets, background), path, depth)?;
        }
    }
    Ok(())
}

fn split_entry(scene: ComposedScene, target: &str, table: &Path) -> Result<ComposedScene> {
    let index = scene.find(target, None)?;
    let entry = &scene.entries[index];
    let labels = io::load_labels(table, entry.scene.len())?;
    let parts = split_into_composed(&entry.name, &entry.scene, &labels)?;
    let mut out = ComposedScene { entries: scene.entries[..index].to_vec() };
    out.entries.extend(parts.entries);
    out.entries.extend_from_slice(&scene.entries[index + 1..]);
    Ok(out)
}

