//! On-disk formats: datasets, scene files, masks, label tables and config files.

mod dataset;
mod masks;
mod png;
mod scene_file;

pub use dataset::{load_dataset, load_manifest, save_dataset, DatasetManifest, FrameEntry, MANIFEST_FILE};
pub use masks::{load_masks, save_mask};
pub use png::{load_png, save_png, BitDepth};
pub use scene_file::{
    load_scene, read_scene, save_basic_scene, save_scene, scene_file_size, write_scene, SizeBreakdown, FORMAT_VERSION,
    MAGIC,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::segment::LabelAssignment;
use crate::train::TrainConfig;

pub(crate) fn read_to_string(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound { path: path.to_path_buf(), context: what.to_string() },
        _ => Error::io(path, e),
    })
}

/// Reads a flat `key = value` training config. Unknown keys are rejected.
pub fn parse_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    parse_config_with_overrides(path, &[])
}

/// Reads a config file and applies `overrides` on top of it.
pub fn parse_config_with_overrides(path: impl AsRef<Path>, overrides: &[(&str, String)]) -> Result<TrainConfig> {
    TrainConfig::parse_with_overrides(&read_to_string(path.as_ref(), "config file")?, overrides)
}

pub fn save_labels(labels: &LabelAssignment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, labels.to_table()).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>, primitive_count: usize) -> Result<LabelAssignment> {
    LabelAssignment::from_table(&read_to_string(path.as_ref(), "label table")?, primitive_count)
}
