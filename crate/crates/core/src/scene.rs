//! Scene representation: textured, relightable surfels grouped into basic
//! scenes that compose without re-optimization.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{normalize_quat, quat_to_matrix, sigmoid, Quat, Vec3, IDENTITY_QUAT};

/// Scales below this are clamped up when allocating texels and rendering.
pub const MIN_SCALE: f64 = 1e-6;

/// Texel budget used by the original pipeline for every basic scene.
pub const DEFAULT_TEXEL_BUDGET: u64 = 10_000_000;

/// Number of stored scalars per primitive outside of textures: geometry
/// (position 3, quaternion 4, two scales, opacity) plus four shading scalars.
pub const GEOMETRY_SCALARS: usize = 3 + 4 + 1 + 1 + 1;
pub const SHADING_SCALARS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TextureMap {
    pub u_dim: usize,
    pub v_dim: usize,
    /// RGB offsets, `(j * u_dim + i) * 3 + channel`.
    pub texels: Vec<f64>,
}

/// The four texels touched by one bilinear lookup.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTaps {
    pub index: [usize; 4],
    pub weight: [f64; 4],
    /// d(weight)/d(tu) and d(weight)/d(tv); zero when the coordinate was clamped.
    pub dw_du: [f64; 4],
    pub dw_dv: [f64; 4],
}

impl TextureMap {
    pub fn zeros(u_dim: usize, v_dim: usize) -> Self {
        TextureMap { u_dim, v_dim, texels: vec![0.0; u_dim * v_dim * 3] }
    }

    pub fn texel(&self, i: usize, j: usize) -> Vec3 {
        let k = (j * self.u_dim + i) * 3;
        Vec3::new(self.texels[k], self.texels[k + 1], self.texels[k + 2])
    }

    pub fn texel_count(&self) -> usize {
        self.u_dim * self.v_dim
    }

    /// Bilinear taps at continuous texel coordinates with clamp-to-edge.
    pub fn taps(&self, tu: f64, tv: f64) -> BilinearTaps {
        let (i0, i1, fu, du) = axis_taps(tu, self.u_dim);
        let (j0, j1, fv, dv) = axis_taps(tv, self.v_dim);
        let idx = |i: usize, j: usize| j * self.u_dim + i;
        BilinearTaps {
            index: [idx(i0, j0), idx(i1, j0), idx(i0, j1), idx(i1, j1)],
            weight: [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv],
            dw_du: [-(1.0 - fv) * du, (1.0 - fv) * du, -fv * du, fv * du],
            dw_dv: [-(1.0 - fu) * dv, -fu * dv, (1.0 - fu) * dv, fu * dv],
        }
    }

    pub fn sample_taps(&self, taps: &BilinearTaps) -> Vec3 {
        let mut c = Vec3::zeros();
        for k in 0..4 {
            let t = taps.index[k] * 3;
            let w = taps.weight[k];
            c.x += w * self.texels[t];
            c.y += w * self.texels[t + 1];
            c.z += w * self.texels[t + 2];
        }
        c
    }

    /// Same value as `sample_taps(&taps(tu, tv))` without the derivative terms.
    #[inline]
    pub fn sample(&self, tu: f64, tv: f64) -> Vec3 {
        let (i0, i1, fu, _) = axis_taps(tu, self.u_dim);
        let (j0, j1, fv, _) = axis_taps(tv, self.v_dim);
        let index = [j0 * self.u_dim + i0, j0 * self.u_dim + i1, j1 * self.u_dim + i0, j1 * self.u_dim + i1];
        let weight = [(1.0 - fu) * (1.0 - fv), fu * (1.0 - fv), (1.0 - fu) * fv, fu * fv];
        let mut c = Vec3::zeros();
        for k in 0..4 {
            let t = index[k] * 3;
            let texel = &self.texels[t..t + 3];
            c.x += weight[k] * texel[0];
            c.y += weight[k] * texel[1];
            c.z += weight[k] * texel[2];
        }
        c
    }
}

/// Returns (lower index, upper index, fraction, d fraction / d coord).
#[inline]
fn axis_taps(t: f64, dim: usize) -> (usize, usize, f64, f64) {
    if dim <= 1 {
        return (0, 0, 0.0, 0.0);
    }
    // texture dimensions fit in u32; the signed conversions are single instructions
    let max = (dim - 1) as i64 as f64;
    let inside = t > 0.0 && t < max;
    let tc = t.clamp(0.0, max);
    // tc >= 0, so truncation is floor
    let i0 = (tc as i64 as usize).min(dim - 2);
    let f = tc - i0 as i64 as f64;
    (i0, i0 + 1, f, if inside { 1.0 } else { 0.0 })
}

/// One 2D Gaussian surfel.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfelPrimitive {
    pub mu: Vec3,
    /// Unit quaternion `[w, x, y, z]`; rotation columns are `t_u`, `t_v`, normal.
    pub rot: Quat,
    /// Natural-log scales along `t_u` and `t_v`.
    pub log_scale: [f64; 2],
    pub opacity_logit: f64,
    pub c_ind: Vec3,
    /// Spherical-harmonic coefficients, `(degree + 1)^2` RGB triples.
    pub sh: Vec<[f64; 3]>,
    pub k_a: f64,
    pub k_d: f64,
    pub k_s: f64,
    pub beta: f64,
    pub texture: Option<TextureMap>,
}

impl Default for SurfelPrimitive {
    fn default() -> Self {
        SurfelPrimitive {
            mu: Vec3::zeros(),
            rot: IDENTITY_QUAT,
            log_scale: [0.0, 0.0],
            opacity_logit: 0.0,
            c_ind: Vec3::zeros(),
            sh: Vec::new(),
            k_a: 1.0,
            k_d: 0.0,
            k_s: 0.0,
            beta: 1.0,
            texture: None,
        }
    }
}

impl SurfelPrimitive {
    pub fn scale_u(&self) -> f64 {
        self.log_scale[0].exp().max(MIN_SCALE)
    }

    pub fn scale_v(&self) -> f64 {
        self.log_scale[1].exp().max(MIN_SCALE)
    }

    pub fn set_scales(&mut self, s_u: f64, s_v: f64) {
        self.log_scale = [s_u.max(MIN_SCALE).ln(), s_v.max(MIN_SCALE).ln()];
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// `(t_u, t_v, un-oriented normal)` in world space. The stored quaternion
    /// is normalized first; a zero quaternion yields the identity frame.
    pub fn axes(&self) -> (Vec3, Vec3, Vec3) {
        let q = normalize_quat(&self.rot).unwrap_or(IDENTITY_QUAT);
        let r = quat_to_matrix(&q);
        (r.column(0).into(), r.column(1).into(), r.column(2).into())
    }
}

/// Optimizer groups; each has its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Rotation,
    Scale,
    Opacity,
    ColorInd,
    ShDc,
    ShRest,
    Shading,
    Texture,
}

impl SurfelPrimitive {
    /// Mutable views of every scalar parameter, in the order used by
    /// [`crate::render::backward::PrimitiveGrad::flatten`].
    pub fn params_mut(&mut self) -> Vec<(ParamGroup, &mut f64)> {
        let mut out: Vec<(ParamGroup, &mut f64)> = Vec::new();
        out.extend(self.mu.iter_mut().map(|v| (ParamGroup::Position, v)));
        out.extend(self.rot.iter_mut().map(|v| (ParamGroup::Rotation, v)));
        out.extend(self.log_scale.iter_mut().map(|v| (ParamGroup::Scale, v)));
        out.push((ParamGroup::Opacity, &mut self.opacity_logit));
        out.extend(self.c_ind.iter_mut().map(|v| (ParamGroup::ColorInd, v)));
        for (k, c) in self.sh.iter_mut().enumerate() {
            let g = if k == 0 { ParamGroup::ShDc } else { ParamGroup::ShRest };
            out.extend(c.iter_mut().map(|v| (g, v)));
        }
        out.push((ParamGroup::Shading, &mut self.k_a));
        out.push((ParamGroup::Shading, &mut self.k_d));
        out.push((ParamGroup::Shading, &mut self.k_s));
        out.push((ParamGroup::Shading, &mut self.beta));
        if let Some(t) = self.texture.as_mut() {
            out.extend(t.texels.iter_mut().map(|v| (ParamGroup::Texture, v)));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        3 + 4 + 2 + 1 + 3 + self.sh.len() * 3 + 4 + self.texture.as_ref().map_or(0, |t| t.texels.len())
    }
}

/// How a basic scene produces the per-surfel base color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Appearance {
    /// View-dependent color from spherical harmonics, no lighting (first fitting phase).
    SphericalHarmonics,
    /// Blinn-Phong shading of the per-surfel color `c_ind`.
    Relightable,
    /// Blinn-Phong shading of `c_palette + c_tex`.
    Textured,
    /// Blinn-Phong shading of `c_tex` alone (stylized scenes bypass the palette).
    Stylized,
}

impl Appearance {
    pub fn code(self) -> u8 {
        match self {
            Appearance::SphericalHarmonics => 0,
            Appearance::Relightable => 1,
            Appearance::Textured => 2,
            Appearance::Stylized => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Appearance::SphericalHarmonics,
            1 => Appearance::Relightable,
            2 => Appearance::Textured,
            3 => Appearance::Stylized,
            _ => return None,
        })
    }

    pub fn is_textured(self) -> bool {
        matches!(self, Appearance::Textured | Appearance::Stylized)
    }
}

/// Non-destructive edit parameters. All factors are multiplicative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditState {
    pub opacity: f64,
    pub k_a: f64,
    pub k_d: f64,
    pub k_s: f64,
    pub beta: f64,
    /// Overrides the light direction passed to the renderer.
    pub light_dir: Option<[f64; 3]>,
    /// Overrides the learned palette color.
    pub palette: Option<[f64; 3]>,
}

impl Default for EditState {
    fn default() -> Self {
        EditState { opacity: 1.0, k_a: 1.0, k_d: 1.0, k_s: 1.0, beta: 1.0, light_dir: None, palette: None }
    }
}

impl EditState {
    pub fn is_identity(&self) -> bool {
        *self == EditState::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightConfig {
    /// Unit direction from the surface towards the light, world space.
    pub direction: [f64; 3],
    /// When set, the light sits at the camera and `direction` is ignored.
    pub headlight: bool,
    pub specular_color: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
}

impl Default for LightConfig {
    fn default() -> Self {
        LightConfig {
            direction: [0.0, 0.0, 1.0],
            headlight: false,
            specular_color: [1.0, 1.0, 1.0],
            ambient: 1.0,
            diffuse: 1.0,
            specular: 1.0,
        }
    }
}

impl LightConfig {
    pub fn with_direction(dir: Vec3) -> Self {
        let d = dir.normalize();
        LightConfig { direction: [d.x, d.y, d.z], ..Default::default() }
    }

    pub fn headlight() -> Self {
        LightConfig { headlight: true, ..Default::default() }
    }

    /// Direction from azimuth/polar angles in degrees (polar measured from +z).
    pub fn direction_from_angles(azimuth_deg: f64, polar_deg: f64) -> Vec3 {
        let (a, p) = (azimuth_deg.to_radians(), polar_deg.to_radians());
        Vec3::new(p.sin() * a.cos(), p.sin() * a.sin(), p.cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicSceneModel {
    pub primitives: Vec<SurfelPrimitive>,
    pub c_palette: Vec3,
    /// World-space texel edge length; zero before allocation.
    pub t_size: f64,
    pub t_total: u64,
    pub appearance: Appearance,
    /// Spherical-harmonic degree of every primitive's `sh` block, if present.
    pub sh_degree: Option<u8>,
    pub edit: EditState,
}

impl Default for BasicSceneModel {
    fn default() -> Self {
        BasicSceneModel {
            primitives: Vec::new(),
            c_palette: Vec3::zeros(),
            t_size: 0.0,
            t_total: DEFAULT_TEXEL_BUDGET,
            appearance: Appearance::Relightable,
            sh_degree: None,
            edit: EditState::default(),
        }
    }
}

impl BasicSceneModel {
    pub fn new(primitives: Vec<SurfelPrimitive>, appearance: Appearance) -> Self {
        BasicSceneModel { primitives, appearance, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn effective_palette(&self) -> Vec3 {
        self.edit.palette.map(Vec3::from).unwrap_or(self.c_palette)
    }

    pub fn total_texels(&self) -> usize {
        self.primitives
            .iter()
            .filter_map(|p| p.texture.as_ref())
            .map(TextureMap::texel_count)
            .sum()
    }

    /// Scalars stored for geometry and shading (textures, SH and `c_ind` excluded).
    pub fn non_texture_param_count(&self) -> usize {
        non_texture_param_count(self.primitives.len())
    }
}

pub fn non_texture_param_count(n: usize) -> usize {
    (GEOMETRY_SCALARS + SHADING_SCALARS) * n
}

/// Bytes of RGB texture storage for a texel budget at 4 bytes per scalar.
pub fn texture_bytes(texels: u64) -> u64 {
    texels * 3 * 4
}

/// World-space texel size that spreads `t_total` texels over the
/// primitives' 6-sigma footprints.
fn budget_texel_size(prims: &[SurfelPrimitive], t_total: u64) -> f64 {
    let area: f64 = prims.iter().map(|p| 36.0 * p.scale_u() * p.scale_v()).sum();
    (area / t_total as f64).sqrt()
}

fn texel_dims(p: &SurfelPrimitive, t_size: f64) -> (usize, usize) {
    let u = (6.0 * p.scale_u() / t_size).ceil().max(1.0) as usize;
    let v = (6.0 * p.scale_v() / t_size).ceil().max(1.0) as usize;
    (u, v)
}

fn allocated_total(prims: &[SurfelPrimitive], t_size: f64) -> u64 {
    prims
        .iter()
        .map(|p| {
            let (u, v) = texel_dims(p, t_size);
            (u * v) as u64
        })
        .sum()
}

/// Chooses the texel size and gives every primitive a zeroed texture map so
/// that the total texel count lands in `[t_total, 1.25 * t_total]`.
pub fn allocate_texels(scene: &mut BasicSceneModel) -> Result<()> {
    let budget = scene.t_total;
    if budget == 0 {
        return Err(Error::InvalidConfig("texel budget must be positive".into()));
    }
    if (budget as usize) < scene.primitives.len() {
        return Err(Error::InvalidConfig(format!(
            "texel budget {budget} is smaller than the primitive count {}",
            scene.primitives.len()
        )));
    }
    for p in &scene.primitives {
        let (su, sv) = (p.scale_u(), p.scale_v());
        if !su.is_finite() || !sv.is_finite() {
            return Err(Error::InvalidParameter("non-finite primitive scale".into()));
        }
    }
    if scene.primitives.is_empty() {
        scene.t_size = 0.0;
        return Ok(());
    }
    let mut t_size = budget_texel_size(&scene.primitives, budget);
    if allocated_total(&scene.primitives, t_size) as f64 > 1.25 * budget as f64 {
        t_size = largest_size_meeting_budget(&scene.primitives, budget, t_size);
    }
    for p in &mut scene.primitives {
        let (u, v) = texel_dims(p, t_size);
        p.texture = Some(TextureMap::zeros(u, v));
    }
    scene.t_size = t_size;
    Ok(())
}

/// Ceiling slack can overshoot when many primitives are small; grow the texel
/// size as far as possible while the total still covers the budget.
fn largest_size_meeting_budget(prims: &[SurfelPrimitive], budget: u64, lo: f64) -> f64 {
    let mut lo = lo;
    let mut hi = lo * 2.0;
    while allocated_total(prims, hi) >= budget {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if allocated_total(prims, mid) >= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Continuous texel coordinates of a point given relative to the surfel center.
pub fn texel_coords(prim: &SurfelPrimitive, t_size: f64, p_local: &Vec3) -> Option<(f64, f64)> {
    let tex = prim.texture.as_ref()?;
    let (t_u, t_v, _) = prim.axes();
    Some((
        t_u.dot(p_local) / t_size + (tex.u_dim as f64 - 1.0) / 2.0,
        t_v.dot(p_local) / t_size + (tex.v_dim as f64 - 1.0) / 2.0,
    ))
}

/// Bilinearly interpolated texture offset at `p_local` (relative to `mu`).
/// Untextured primitives return zero.
pub fn sample_texture(prim: &SurfelPrimitive, t_size: f64, p_local: &Vec3) -> Vec3 {
    match (texel_coords(prim, t_size, p_local), prim.texture.as_ref()) {
        (Some((u, v)), Some(tex)) => tex.sample(u, v),
        _ => Vec3::zeros(),
    }
}

/// One basic scene inside a composition.
#[derive(Debug, Clone)]
pub struct SceneEntry {
    pub name: String,
    /// Segment label when this entry came from splitting a scene.
    pub segment: Option<u32>,
    pub visible: bool,
    pub scene: Arc<BasicSceneModel>,
}

/// Several basic scenes rendered together; primitives are never copied.
#[derive(Debug, Clone, Default)]
pub struct ComposedScene {
    pub entries: Vec<SceneEntry>,
}

impl ComposedScene {
    pub fn single(scene: BasicSceneModel) -> Self {
        compose(vec![Arc::new(scene)])
    }

    pub fn visible_scenes(&self) -> Vec<&BasicSceneModel> {
        self.entries.iter().filter(|e| e.visible).map(|e| e.scene.as_ref()).collect()
    }

    pub fn primitive_count(&self) -> usize {
        self.entries.iter().map(|e| e.scene.len()).sum()
    }

    /// Appends every entry of `other`. Entry groups whose name is already
    /// taken are renamed as a whole so their segments stay together.
    pub fn append(&mut self, other: ComposedScene) {
        let mut renamed: Vec<(String, String)> = Vec::new();
        let mut taken: std::collections::HashSet<String> = self.entries.iter().map(|e| e.name.clone()).collect();
        let clashes: std::collections::HashSet<String> =
            other.entries.iter().map(|e| e.name.clone()).filter(|n| taken.contains(n)).collect();
        taken.extend(other.entries.iter().map(|e| e.name.clone()));
        let mut next = self.entries.len();
        for mut e in other.entries {
            if clashes.contains(&e.name) {
                let new_name = match renamed.iter().find(|(old, _)| *old == e.name) {
                    Some((_, new)) => new.clone(),
                    None => {
                        while taken.contains(&format!("scene{next}")) {
                            next += 1;
                        }
                        let new = format!("scene{next}");
                        taken.insert(new.clone());
                        renamed.push((e.name.clone(), new.clone()));
                        new
                    }
                };
                e.name = new_name;
            }
            self.entries.push(e);
        }
    }

    /// Index of the entry matching a scene id (position or name) and optional segment.
    pub fn find(&self, id: &str, segment: Option<u32>) -> Result<usize> {
        let by_index = id.parse::<usize>().ok();
        self.entries
            .iter()
            .enumerate()
            .position(|(i, e)| {
                (by_index == Some(i) || e.name == id)
                    && (segment.is_none() || e.segment == segment)
            })
            .or_else(|| {
                // a numeric id may address the n-th entry while a segment narrows further
                let base = by_index?;
                let name = &self.entries.get(base)?.name;
                self.entries.iter().position(|e| &e.name == name && e.segment == segment)
            })
            .ok_or_else(|| {
                Error::UnknownTarget(match segment {
                    Some(s) => format!("{id}/{s}"),
                    None => id.to_string(),
                })
            })
    }
}

pub fn compose(scenes: Vec<Arc<BasicSceneModel>>) -> ComposedScene {
    ComposedScene {
        entries: scenes
            .into_iter()
            .enumerate()
            .map(|(i, scene)| SceneEntry { name: format!("scene{i}"), segment: None, visible: true, scene })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prim_with_scales(su: f64, sv: f64) -> SurfelPrimitive {
        let mut p = SurfelPrimitive::default();
        p.set_scales(su, sv);
        p
    }

    #[test]
    fn append_renames_clashing_groups_together() {
        let part = |seg| SceneEntry {
            name: "scene0".into(),
            segment: Some(seg),
            visible: true,
            scene: Arc::new(BasicSceneModel::new(Vec::new(), Appearance::Textured)),
        };
        let mut a = ComposedScene::single(BasicSceneModel::new(Vec::new(), Appearance::Textured));
        a.entries.push(SceneEntry { name: "scene1".into(), ..part(0) });
        a.append(ComposedScene { entries: vec![part(0), part(1)] });
        let names: Vec<&str> = a.entries.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["scene0", "scene1", "scene2", "scene2"]);
        assert_eq!(a.find("scene2", Some(1)).unwrap(), 3);
    }

    #[test]
    fn exact_budget_single_primitive() {
        let mut scene = BasicSceneModel::new(vec![prim_with_scales(1.0, 1.0)], Appearance::Textured);
        scene.t_total = 36;
        allocate_texels(&mut scene).unwrap();
        assert!((scene.t_size - 1.0).abs() < 1e-12);
        let tex = scene.primitives[0].texture.as_ref().unwrap();
        assert_eq!((tex.u_dim, tex.v_dim), (6, 6));
        assert_eq!(scene.total_texels(), 36);
    }

    #[test]
    fn zero_budget_is_rejected() {
        let mut scene = BasicSceneModel::new(vec![prim_with_scales(1.0, 1.0)], Appearance::Textured);
        scene.t_total = 0;
        assert!(matches!(allocate_texels(&mut scene), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn random_scales_stay_within_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prims = (0..1000)
            .map(|_| prim_with_scales(rng.gen_range(0.01..0.5), rng.gen_range(0.01..0.5)))
            .collect();
        let mut scene = BasicSceneModel::new(prims, Appearance::Textured);
        scene.t_total = 100_000;
        allocate_texels(&mut scene).unwrap();
        let total = scene.total_texels() as f64;
        assert!((100_000.0..=125_000.0).contains(&total), "total {total}");
        assert!(scene.primitives.iter().all(|p| {
            let t = p.texture.as_ref().unwrap();
            t.u_dim >= 1 && t.v_dim >= 1
        }));
    }

    #[test]
    fn paper_texture_budget_in_mebibytes() {
        let mib = texture_bytes(DEFAULT_TEXEL_BUDGET) as f64 / (1024.0 * 1024.0);
        assert!((mib - 114.5).abs() / 114.5 < 0.01, "{mib}");
    }

    #[test]
    fn texture_center_and_unit_step() {
        let mut p = prim_with_scales(0.5, 0.25);
        p.rot = crate::math::normalize_quat(&[0.9, 0.1, -0.3, 0.2]).unwrap();
        let mut tex = TextureMap::zeros(7, 5);
        for (k, t) in tex.texels.iter_mut().enumerate() {
            *t = (k as f64 * 0.37).sin();
        }
        p.texture = Some(tex.clone());
        let t_size = 0.1;
        let (u, v) = texel_coords(&p, t_size, &Vec3::zeros()).unwrap();
        assert_eq!((u, v), (3.0, 2.0));
        let (t_u, _, _) = p.axes();
        let (u1, v1) = texel_coords(&p, t_size, &(t_u * t_size)).unwrap();
        assert!((u1 - 4.0).abs() < 1e-12 && (v1 - 2.0).abs() < 1e-12);
        assert!((sample_texture(&p, t_size, &Vec3::zeros()) - tex.texel(3, 2)).norm() < 1e-12);
    }

    #[test]
    fn clamp_to_edge() {
        let mut tex = TextureMap::zeros(3, 2);
        tex.texels.iter_mut().enumerate().for_each(|(k, t)| *t = k as f64);
        assert_eq!(tex.sample(-5.0, -1.0), tex.texel(0, 0));
        assert_eq!(tex.sample(9.0, 7.0), tex.texel(2, 1));
        let taps = tex.taps(-5.0, 0.5);
        assert!(taps.dw_du.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn fourteen_scalars_per_primitive() {
        assert_eq!(non_texture_param_count(47_767), 14 * 47_767);
    }
}
