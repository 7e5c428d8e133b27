use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb, Rgba};

use crate::error::{Error, Result};
use crate::image::{linear_to_srgb, srgb_to_linear, Image};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Color channels are sRGB encoded; a fourth channel (alpha) and single
/// channel images are stored linearly.
fn encode(image: &Image, depth: BitDepth) -> Vec<u16> {
    let max = depth.max();
    let color = image.channels >= 3;
    image
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = if color && i % image.channels < 3 { linear_to_srgb(v) } else { v.clamp(0.0, 1.0) };
            (v * max).round() as u16
        })
        .collect()
}

/// Writes a 1, 3 or 4 channel image as PNG.
pub fn save_png(image: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (image.width as u32, image.height as u32);
    let raw = encode(image, depth);
    let dynamic = match (image.channels, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, narrow(raw)).unwrap()),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, narrow(raw)).unwrap()),
        (4, BitDepth::Eight) => DynamicImage::ImageRgba8(ImageBuffer::<Rgba<u8>, _>::from_raw(w, h, narrow(raw)).unwrap()),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).unwrap()),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).unwrap()),
        (4, BitDepth::Sixteen) => DynamicImage::ImageRgba16(ImageBuffer::<Rgba<u16>, _>::from_raw(w, h, raw).unwrap()),
        (c, _) => return Err(Error::InvalidParameter(format!("cannot write a {c}-channel image"))),
    };
    dynamic.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::UnreadableImage { path: path.to_path_buf(), message: other.to_string() },
    })
}

fn narrow(raw: Vec<u16>) -> Vec<u8> {
    raw.into_iter().map(|v| v as u8).collect()
}

pub(crate) fn open(path: &Path, what: &str) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(Error::FileNotFound { path: path.to_path_buf(), context: what.to_string() });
    }
    image::open(path).map_err(|e| Error::UnreadableImage { path: path.to_path_buf(), message: e.to_string() })
}

/// Loads a PNG as linear RGBA. Images without alpha get alpha 1.
pub fn load_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynamic = open(path, "image")?;
    if !dynamic.color().has_alpha() {
        log::warn!("{} has no alpha channel, assuming full coverage", path.display());
    }
    let rgba = dynamic.into_rgba16();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let data = rgba
        .into_raw()
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let v = v as f64 / 65535.0;
            if i % 4 < 3 {
                srgb_to_linear(v)
            } else {
                v
            }
        })
        .collect();
    Image::from_data(w, h, 4, data)
}
