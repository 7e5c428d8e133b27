//! Training and editing configuration as a flat `key = value` table.

use crate::error::{Error, Result};

macro_rules! config_fields {
    ($( $(#[$doc:meta])* $name:ident : $ty:ty = $default:expr => $help:literal ),* $(,)?) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct TrainConfig {
            $( $(#[$doc])* pub $name: $ty, )*
        }

        impl Default for TrainConfig {
            fn default() -> Self {
                TrainConfig { $( $name: $default, )* }
            }
        }

        impl TrainConfig {
            /// Every key, in declaration order.
            pub const KEYS: &'static [&'static str] = &[ $( stringify!($name), )* ];

            /// Sets one field from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( stringify!($name) => {
                        self.$name = value.trim().parse::<$ty>().map_err(|e| {
                            Error::InvalidConfig(format!("{key}: cannot parse {value:?}: {e}"))
                        })?;
                    } )*
                    _ => return Err(Error::UnknownConfigKey(key.to_string())),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $( stringify!($name) => Some(self.$name.to_string()), )*
                    _ => None,
                }
            }

            pub fn describe(key: &str) -> &'static str {
                match key {
                    $( stringify!($name) => $help, )*
                    _ => "",
                }
            }
        }
    };
}

config_fields! {
    iterations_phase1: usize = 10_000 => "iterations of the geometry + spherical-harmonics phase",
    iterations_phase2: usize = 20_000 => "iterations of the shading-attribute phase",
    iterations_texture: usize = 5_000 => "iterations of the texture phase",
    initial_primitives: usize = 100_000 => "primitives created by random initialization",
    initial_opacity: f64 = 0.1 => "opacity of freshly initialized primitives",
    sh_degree: u8 = 3 => "spherical-harmonics degree of the first phase",
    lr_position_init: f64 = 1.6e-4 => "initial position learning rate (times scene extent)",
    lr_position_final: f64 = 1.6e-6 => "final position learning rate (times scene extent)",
    lr_sh_dc: f64 = 0.0025 => "learning rate of the DC spherical-harmonics band",
    lr_sh_rest: f64 = 0.000125 => "learning rate of the higher spherical-harmonics bands",
    lr_opacity: f64 = 0.05 => "opacity learning rate",
    lr_scale: f64 = 0.005 => "log-scale learning rate",
    lr_rotation: f64 = 0.001 => "quaternion learning rate",
    lr_shading: f64 = 0.01 => "learning rate of c_ind, k_a, k_d, k_s and beta",
    lr_palette: f64 = 0.01 => "palette color learning rate",
    lr_texture: f64 = 0.025 => "texel learning rate",
    lambda_normal: f64 = 0.05 => "weight of the normal-consistency loss",
    lambda_alpha: f64 = 0.1 => "weight of the alpha reconstruction loss",
    lambda_bilateral: f64 = 0.01 => "scale of the bilateral smoothness terms",
    lambda_ssim: f64 = 0.2 => "D-SSIM share of the reconstruction losses",
    lambda_sparsity: f64 = 0.01 => "weight of the texture sparsity loss",
    densify_from: usize = 500 => "first densification iteration",
    densify_until: usize = 7_500 => "last densification iteration",
    densify_interval: usize = 100 => "iterations between densification steps",
    densify_grad_threshold: f64 = 2e-4 => "screen-space positional gradient threshold",
    percent_dense: f64 = 0.01 => "clone/split boundary as a fraction of the scene extent",
    prune_opacity: f64 = 0.005 => "primitives below this opacity are pruned",
    texel_budget: u64 = 10_000_000 => "total texel budget per basic scene",
    lambda_style: f64 = 0.9 => "feature-matching share of the image style loss",
    style_iterations: usize = 3_000 => "image-driven stylization iterations",
    style_rerandomize: bool = true => "re-randomize texels before image-driven stylization",
    text_iterations: usize = 1_500 => "text-driven stylization iterations",
    text_rerandomize: bool = false => "re-randomize texels before text-driven stylization",
    segment_threshold: f64 = 0.6 => "inside/total weight ratio counted as a positive vote",
    segment_min_view_fraction: f64 = 0.5 => "fraction of positive views needed for a label",
    eval_interval: usize = 500 => "iterations between metrics records (0 disables)",
    seed: u64 = 0 => "random seed",
}

impl TrainConfig {
    /// Parses a flat config file. Missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parses a config file, then sets `overrides` on top before validating.
    pub fn parse_with_overrides(text: &str, overrides: &[(&str, String)]) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Malformed { line: n + 1, message: format!("expected key = value, got {raw:?}") });
            };
            let key = key.trim();
            if value.trim().is_empty() {
                return Err(Error::Malformed { line: n + 1, message: format!("missing value for {key}") });
            }
            match cfg.set(key, value) {
                Err(Error::InvalidConfig(m)) => return Err(Error::Malformed { line: n + 1, message: m }),
                other => other?,
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes every key, one per line.
    pub fn to_text(&self) -> String {
        Self::KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default())).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr_position_init", self.lr_position_init),
            ("lr_position_final", self.lr_position_final),
            ("lr_sh_dc", self.lr_sh_dc),
            ("lr_sh_rest", self.lr_sh_rest),
            ("lr_opacity", self.lr_opacity),
            ("lr_scale", self.lr_scale),
            ("lr_rotation", self.lr_rotation),
            ("lr_shading", self.lr_shading),
            ("lr_palette", self.lr_palette),
            ("lr_texture", self.lr_texture),
        ];
        for (k, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{k} must be positive, got {v}")));
            }
        }
        let weights = [
            ("lambda_normal", self.lambda_normal),
            ("lambda_alpha", self.lambda_alpha),
            ("lambda_bilateral", self.lambda_bilateral),
            ("lambda_sparsity", self.lambda_sparsity),
            ("initial_opacity", self.initial_opacity),
            ("densify_grad_threshold", self.densify_grad_threshold),
            ("percent_dense", self.percent_dense),
            ("prune_opacity", self.prune_opacity),
        ];
        for (k, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{k} must be non-negative, got {v}")));
            }
        }
        for (k, v) in [("lambda_ssim", self.lambda_ssim), ("lambda_style", self.lambda_style)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{k} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.initial_opacity > 0.0 && self.initial_opacity < 1.0) {
            return Err(Error::InvalidConfig("initial_opacity must lie in (0, 1)".into()));
        }
        if self.sh_degree > 3 {
            return Err(Error::InvalidConfig(format!("sh_degree {} exceeds 3", self.sh_degree)));
        }
        if self.densify_interval == 0 {
            return Err(Error::InvalidConfig("densify_interval must be positive".into()));
        }
        Ok(())
    }
}
