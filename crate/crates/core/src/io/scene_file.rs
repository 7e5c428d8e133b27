//! Binary scene files. Little-endian throughout; primitive attributes are
//! stored as contiguous `f32` arrays, one array per attribute.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::render::sh::coeff_count;
use crate::scene::{
    Appearance, BasicSceneModel, ComposedScene, EditState, SceneEntry, SurfelPrimitive, TextureMap, GEOMETRY_SCALARS,
    SHADING_SCALARS,
};

pub const MAGIC: &[u8; 4] = b"TGSV";
pub const FORMAT_VERSION: u32 = 1;

const FILE_HEADER_BYTES: u64 = 12;
const NO_SEGMENT: u32 = u32::MAX;
const NO_SH: u8 = u8::MAX;
const EDIT_LIGHT_DIR: u8 = 1;
const EDIT_PALETTE: u8 = 2;

/// Byte counts of one serialized file, by section.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SizeBreakdown {
    /// File header plus per-scene headers (names, flags, edit state).
    pub header: u64,
    /// Position, rotation, scales and opacity.
    pub geometry: u64,
    /// `k_a`, `k_d`, `k_s` and `beta`.
    pub shading: u64,
    /// Per-primitive `c_ind`, present only when some color is non-zero.
    pub color: u64,
    pub sh: u64,
    /// Palette and texel size.
    pub palette: u64,
    /// Texture dimensions and texels.
    pub texture: u64,
}

impl SizeBreakdown {
    pub fn total(&self) -> u64 {
        self.header + self.geometry + self.shading + self.color + self.sh + self.palette + self.texture
    }

    /// Geometry plus shading: the payload every primitive carries.
    pub fn non_texture(&self) -> u64 {
        self.geometry + self.shading
    }
}

fn has_color(scene: &BasicSceneModel) -> bool {
    scene.primitives.iter().any(|p| p.c_ind != Vec3::zeros())
}

fn scene_header_bytes(entry: &SceneEntry) -> u64 {
    let edit = &entry.scene.edit;
    2 + entry.name.len() as u64
        + 4 // segment
        + 4 // visible, appearance, sh degree, color flag
        + 8 // t_total
        + 5 * 8
        + 1
        + if edit.light_dir.is_some() { 24 } else { 0 }
        + if edit.palette.is_some() { 24 } else { 0 }
        + 4 // primitive count
}

/// Size of the file [`write_scene`] produces, computed without serializing.
pub fn scene_file_size(scene: &ComposedScene) -> SizeBreakdown {
    let mut out = SizeBreakdown { header: FILE_HEADER_BYTES, ..Default::default() };
    for entry in &scene.entries {
        let s = &entry.scene;
        let n = s.len() as u64;
        out.header += scene_header_bytes(entry);
        out.geometry += GEOMETRY_SCALARS as u64 * 4 * n;
        out.shading += SHADING_SCALARS as u64 * 4 * n;
        if has_color(s) {
            out.color += 3 * 4 * n;
        }
        if let Some(d) = s.sh_degree {
            out.sh += coeff_count(d) as u64 * 3 * 4 * n;
        }
        out.palette += 4 * 4;
        out.texture += 4 * n + 12 * s.total_texels() as u64;
    }
    out
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.0.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, values: impl IntoIterator<Item = f64>) {
        for v in values {
            self.f32(v);
        }
    }
}

fn write_entry(w: &mut Writer, entry: &SceneEntry) -> Result<()> {
    let s = &entry.scene;
    let name = entry.name.as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| Error::InvalidParameter("scene name too long".into()))?;
    let count = u32::try_from(s.len()).map_err(|_| Error::InvalidParameter("too many primitives".into()))?;
    w.u16(name_len);
    w.0.extend_from_slice(name);
    w.u32(entry.segment.unwrap_or(NO_SEGMENT));
    w.u8(entry.visible as u8);
    w.u8(s.appearance.code());
    w.u8(s.sh_degree.unwrap_or(NO_SH));
    let color = has_color(s);
    w.u8(color as u8);
    w.u64(s.t_total);
    let e = &s.edit;
    for v in [e.opacity, e.k_a, e.k_d, e.k_s, e.beta] {
        w.f64(v);
    }
    let flags = if e.light_dir.is_some() { EDIT_LIGHT_DIR } else { 0 } | if e.palette.is_some() { EDIT_PALETTE } else { 0 };
    w.u8(flags);
    for v in e.light_dir.iter().chain(e.palette.iter()) {
        v.iter().for_each(|&x| w.f64(x));
    }
    w.u32(count);

    let prims = &s.primitives;
    w.f32s(prims.iter().flat_map(|p| p.mu.iter().copied().collect::<Vec<_>>()));
    w.f32s(prims.iter().flat_map(|p| p.rot));
    w.f32s(prims.iter().flat_map(|p| p.log_scale));
    w.f32s(prims.iter().map(|p| p.opacity_logit));
    if color {
        w.f32s(prims.iter().flat_map(|p| [p.c_ind.x, p.c_ind.y, p.c_ind.z]));
    }
    w.f32s(prims.iter().map(|p| p.k_a));
    w.f32s(prims.iter().map(|p| p.k_d));
    w.f32s(prims.iter().map(|p| p.k_s));
    w.f32s(prims.iter().map(|p| p.beta));
    if let Some(d) = s.sh_degree {
        let k = coeff_count(d);
        for (i, p) in prims.iter().enumerate() {
            if p.sh.len() != k {
                return Err(Error::InvalidParameter(format!(
                    "primitive {i} has {} SH coefficients, degree {d} needs {k}",
                    p.sh.len()
                )));
            }
        }
        w.f32s(prims.iter().flat_map(|p| p.sh.iter().flatten().copied().collect::<Vec<_>>()));
    }
    w.f32s([s.c_palette.x, s.c_palette.y, s.c_palette.z, s.t_size]);
    for (i, p) in prims.iter().enumerate() {
        match &p.texture {
            None => {
                w.u16(0);
                w.u16(0);
            }
            Some(t) => {
                let dim = |d: usize| {
                    u16::try_from(d)
                        .ok()
                        .filter(|&d| d > 0)
                        .ok_or_else(|| Error::InvalidParameter(format!("primitive {i}: texture dimension {d}")))
                };
                w.u16(dim(t.u_dim)?);
                w.u16(dim(t.v_dim)?);
                w.f32s(t.texels.iter().copied());
            }
        }
    }
    Ok(())
}

/// Serializes a composition. Values are narrowed to `f32` except the edit
/// state, which keeps full precision.
pub fn write_scene(scene: &ComposedScene) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::with_capacity(scene_file_size(scene).total() as usize));
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(u32::try_from(scene.entries.len()).map_err(|_| Error::InvalidParameter("too many scenes".into()))?);
    for entry in &scene.entries {
        write_entry(&mut w, entry)?;
    }
    Ok(w.0)
}

struct Reader<'a> {
    data: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.data.len()).ok_or_else(|| {
            Error::Format(format!("truncated: needed {n} bytes at offset {}, file has {}", self.at, self.data.len()))
        })?;
        let out = &self.data[self.at..end];
        self.at = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("array size overflows".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }
}

fn read_entry(r: &mut Reader) -> Result<SceneEntry> {
    let name_len = r.u16()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Format("scene name is not UTF-8".into()))?;
    let segment = match r.u32()? {
        NO_SEGMENT => None,
        s => Some(s),
    };
    let visible = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(Error::Format(format!("bad visibility flag {v}"))),
    };
    let code = r.u8()?;
    let appearance = Appearance::from_code(code).ok_or_else(|| Error::Format(format!("unknown appearance {code}")))?;
    let sh_degree = match r.u8()? {
        NO_SH => None,
        d if d <= 3 => Some(d),
        d => return Err(Error::Format(format!("unsupported SH degree {d}"))),
    };
    let color = r.u8()? != 0;
    let t_total = r.u64()?;
    let mut edit = EditState {
        opacity: r.f64()?,
        k_a: r.f64()?,
        k_d: r.f64()?,
        k_s: r.f64()?,
        beta: r.f64()?,
        ..Default::default()
    };
    let flags = r.u8()?;
    if flags & !(EDIT_LIGHT_DIR | EDIT_PALETTE) != 0 {
        return Err(Error::Format(format!("unknown edit flags {flags:#x}")));
    }
    if flags & EDIT_LIGHT_DIR != 0 {
        edit.light_dir = Some([r.f64()?, r.f64()?, r.f64()?]);
    }
    if flags & EDIT_PALETTE != 0 {
        edit.palette = Some([r.f64()?, r.f64()?, r.f64()?]);
    }
    let n = r.u32()? as usize;
    // every primitive needs at least its geometry, shading and texture header
    if n.saturating_mul(4 * (GEOMETRY_SCALARS + SHADING_SCALARS) + 4) > r.data.len() - r.at {
        return Err(Error::Format(format!("truncated: {n} primitives do not fit in the file")));
    }

    let mu = r.f32s(3 * n)?;
    let rot = r.f32s(4 * n)?;
    let log_scale = r.f32s(2 * n)?;
    let opacity = r.f32s(n)?;
    let c_ind = if color { r.f32s(3 * n)? } else { vec![0.0; 3 * n] };
    let k_a = r.f32s(n)?;
    let k_d = r.f32s(n)?;
    let k_s = r.f32s(n)?;
    let beta = r.f32s(n)?;
    let sh = match sh_degree {
        Some(d) => Some((coeff_count(d), r.f32s(coeff_count(d) * 3 * n)?)),
        None => None,
    };
    let tail = r.f32s(4)?;
    let mut primitives = Vec::with_capacity(n);
    for i in 0..n {
        let (u, v) = (r.u16()? as usize, r.u16()? as usize);
        let texture = match (u, v) {
            (0, 0) => None,
            (0, _) | (_, 0) => return Err(Error::Format(format!("primitive {i}: texture of size {u}x{v}"))),
            _ => Some(TextureMap { u_dim: u, v_dim: v, texels: r.f32s(u * v * 3)? }),
        };
        primitives.push(SurfelPrimitive {
            mu: Vec3::new(mu[3 * i], mu[3 * i + 1], mu[3 * i + 2]),
            rot: [rot[4 * i], rot[4 * i + 1], rot[4 * i + 2], rot[4 * i + 3]],
            log_scale: [log_scale[2 * i], log_scale[2 * i + 1]],
            opacity_logit: opacity[i],
            c_ind: Vec3::new(c_ind[3 * i], c_ind[3 * i + 1], c_ind[3 * i + 2]),
            sh: match &sh {
                Some((k, data)) => data[i * k * 3..(i + 1) * k * 3].chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                None => Vec::new(),
            },
            k_a: k_a[i],
            k_d: k_d[i],
            k_s: k_s[i],
            beta: beta[i],
            texture,
        });
    }
    let scene = BasicSceneModel {
        primitives,
        c_palette: Vec3::new(tail[0], tail[1], tail[2]),
        t_size: tail[3],
        t_total,
        appearance,
        sh_degree,
        edit,
    };
    Ok(SceneEntry { name, segment, visible, scene: Arc::new(scene) })
}

pub fn read_scene(data: &[u8]) -> Result<ComposedScene> {
    let mut r = Reader { data, at: 0 };
    let magic = r.take(4).map_err(|_| Error::Format("file too short for a header".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        entries.push(read_entry(&mut r)?);
    }
    if r.at != data.len() {
        return Err(Error::Format(format!("{} trailing bytes", data.len() - r.at)));
    }
    Ok(ComposedScene { entries })
}

pub fn save_scene(scene: &ComposedScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_scene(scene)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_basic_scene(scene: &BasicSceneModel, path: impl AsRef<Path>) -> Result<()> {
    save_scene(&ComposedScene::single(scene.clone()), path)
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<ComposedScene> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound { path: path.to_path_buf(), context: "scene file".into() },
        _ => Error::io(path, e),
    })?;
    read_scene(&bytes)
}
