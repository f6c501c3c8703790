//! 8-bit PNG export and import for images and textures.

use std::path::Path;

use crate::error::{Error, Result};
use crate::render::Image;
use crate::texture::{Palette, TextureMap, TextureMode};

/// Quantizes a channel value in [0, 1] to 8 bits (round to nearest, clamped).
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn to_rgb8(img: &Image) -> image::RgbImage {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, p) in img.pixels.iter().enumerate() {
        let (x, y) = ((i % img.width) as u32, (i / img.width) as u32);
        buf.put_pixel(x, y, image::Rgb(p.map(to_u8)));
    }
    buf
}

pub fn from_rgb8(buf: &image::RgbImage) -> Image {
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let pixels = buf
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    Image {
        width: w,
        height: h,
        pixels,
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    to_rgb8(img)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(from_rgb8(&dynimg.to_rgb8()))
}

/// Maps every pixel to its nearest palette color, undoing 8-bit quantization
/// of an exported hard texture.
pub fn snap_to_palette(img: &Image, palette: &Palette) -> TextureMap {
    let pixels = img
        .pixels
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, palette.colors()[0]);
            for c in palette.colors() {
                let d: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                if d < best.0 {
                    best = (d, *c);
                }
            }
            best.1
        })
        .collect();
    TextureMap {
        width: img.width,
        height: img.height,
        pixels,
        mode: TextureMode::Hard,
    }
}

/// Tiles equally sized images into a grid with `cols` columns.
pub fn contact_sheet(images: &[Image], cols: usize) -> Result<Image> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("contact sheet needs at least one image".into()))?;
    let (w, h) = (first.width, first.height);
    if images.iter().any(|i| i.width != w || i.height != h) {
        return Err(Error::InvalidInput("contact sheet images differ in size".into()));
    }
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let mut out = Image::filled(w * cols, h * rows, [1.0; 3]);
    for (n, img) in images.iter().enumerate() {
        let (ox, oy) = ((n % cols) * w, (n / cols) * h);
        for y in 0..h {
            let dst = (oy + y) * out.width + ox;
            out.pixels[dst..dst + w].copy_from_slice(&img.pixels[y * w..(y + 1) * w]);
        }
    }
    Ok(out)
}
