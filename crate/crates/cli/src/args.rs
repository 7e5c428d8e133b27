//! Argument groups shared by several subcommands.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use texgs::math::Vec3;
use texgs::render::RenderMode;
use texgs::scene::LightConfig;

fn parse_numbers<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != N {
        return Err(format!("expected {N} comma-separated numbers, got `{s}`"));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("`{p}`: {e}"))?;
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    parse_numbers(s)
}

pub fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    parse_numbers(s)
}

pub fn parse_vec4(s: &str) -> Result<[f64; 4], String> {
    parse_numbers(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Shaded,
    Normal,
    Depth,
    Texture,
}

impl Mode {
    pub fn render_mode(self) -> RenderMode {
        match self {
            Mode::Shaded => RenderMode::Shaded,
            Mode::Normal => RenderMode::Normal,
            Mode::Depth => RenderMode::Depth,
            Mode::Texture => RenderMode::FlatTexture,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Shaded => "shaded",
            Mode::Normal => "normal",
            Mode::Depth => "depth",
            Mode::Texture => "texture",
        }
    }
}

/// Light and background. Unset values fall back to the dataset manifest, if
/// any, and then to the listed defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct LightArgs {
    /// direction towards the light, world space [default: 0,0,1]
    #[arg(long, value_name = "X,Y,Z", value_parser = parse_vec3, allow_negative_numbers = true)]
    pub light_dir: Option<[f64; 3]>,
    /// place the light at the camera
    #[arg(long)]
    pub headlight: bool,
    /// ambient light intensity [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub ambient: Option<f64>,
    /// diffuse light intensity [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub diffuse: Option<f64>,
    /// specular light intensity [default: 1]
    #[arg(long, allow_negative_numbers = true)]
    pub specular: Option<f64>,
    /// background color, linear RGB [default: 0,0,0]
    #[arg(long, value_name = "R,G,B", value_parser = parse_vec3, allow_negative_numbers = true)]
    pub background: Option<[f64; 3]>,
}

impl LightArgs {
    pub fn light(&self, base: LightConfig) -> LightConfig {
        let mut light = base;
        if let Some(d) = self.light_dir {
            let d = Vec3::from(d).normalize();
            light.direction = [d.x, d.y, d.z];
        }
        if self.headlight {
            light.headlight = true;
        }
        light.ambient = self.ambient.unwrap_or(light.ambient);
        light.diffuse = self.diffuse.unwrap_or(light.diffuse);
        light.specular = self.specular.unwrap_or(light.specular);
        light
    }

    pub fn background(&self, base: Vec3) -> Vec3 {
        self.background.map(Vec3::from).unwrap_or(base)
    }
}

/// Addresses one entry of a scene file.
#[derive(Debug, Clone, Args)]
pub struct TargetArgs {
    /// entry name or position inside the scene file
    #[arg(long, default_value = "0")]
    pub target: String,
    /// segment label of the entry
    #[arg(long)]
    pub segment: Option<u32>,
}

/// Seed for subcommands that take no training config.
#[derive(Debug, Clone, Args)]
pub struct SeedArg {
    /// random seed (these outputs are deterministic; accepted for uniformity)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct SceneIo {
    /// input scene file
    #[arg(long)]
    pub scene: PathBuf,
    /// output scene file
    #[arg(long)]
    pub out: PathBuf,
}
