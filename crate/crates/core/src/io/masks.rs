use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::png::open;
use crate::dataset::MultiViewDataset;
use crate::error::{Error, Result};
use crate::segment::{Mask, MaskSet};

fn decode(path: &Path, img: DynamicImage) -> Result<Mask> {
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (values, on): (Vec<u16>, u16) = match img {
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => (img.into_luma16().into_raw(), u16::MAX),
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => {
            (img.into_luma8().into_raw().into_iter().map(u16::from).collect(), 255)
        }
        other => {
            return Err(Error::UnreadableImage {
                path: path.to_path_buf(),
                message: format!("masks must be single-channel, got {:?}", other.color()),
            })
        }
    };
    let data = values
        .into_iter()
        .map(|v| match v {
            0 => Ok(false),
            v if v == on => Ok(true),
            value => Err(Error::NonBinaryMask { path: path.to_path_buf(), value }),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mask { width, height, data })
}

/// Loads `dir/<view name>.png` for every dataset view that has one.
pub fn load_masks(dir: impl AsRef<Path>, dataset: &MultiViewDataset) -> Result<MaskSet> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::FileNotFound { path: dir.to_path_buf(), context: "mask directory".into() });
    }
    let mut set = MaskSet::default();
    for view in &dataset.views {
        let path = dir.join(format!("{}.png", view.name));
        if !path.is_file() {
            continue;
        }
        let mask = decode(&path, open(&path, "mask")?)?;
        if mask.width != view.camera.width || mask.height != view.camera.height {
            return Err(Error::DimensionMismatch(format!(
                "mask {} is {}x{}, view is {}x{}",
                path.display(),
                mask.width,
                mask.height,
                view.camera.width,
                view.camera.height
            )));
        }
        set.push(view.name.clone(), view.camera.clone(), mask);
    }
    if set.views.is_empty() {
        return Err(Error::FileNotFound { path: dir.to_path_buf(), context: "no mask matches a dataset view".into() });
    }
    Ok(set)
}

/// Writes a mask as an 8-bit 0/255 PNG.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = mask.data.iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(mask.width as u32, mask.height as u32, raw)
        .ok_or_else(|| Error::DimensionMismatch("mask data does not match its size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::UnreadableImage { path: path.to_path_buf(), message: other.to_string() },
    })
}
