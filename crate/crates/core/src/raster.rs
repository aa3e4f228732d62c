//! Raster helpers shared by every stage.
//!
//! Images are stored top-left origin, row-major (the `image` crate layout).
//! Public y coordinates elsewhere in the crate use a bottom-left origin; the
//! conversion `y = height - 1 - row` happens only through the functions here.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage, RgbaImage};

use crate::error::{Error, Result};

/// Bottom-left-origin y of a raster row.
#[inline]
pub fn y_of_row(row: u32, height: u32) -> i32 {
    height as i32 - 1 - row as i32
}

/// Raster row of a bottom-left-origin y.
#[inline]
pub fn row_of_y(y: i32, height: u32) -> i32 {
    height as i32 - 1 - y
}

/// Integer luminance approximation `(r + 2g + b) / 4`.
#[inline]
pub fn luminance(p: [u8; 3]) -> u16 {
    (p[0] as u16 + 2 * p[1] as u16 + p[2] as u16) / 4
}

/// Same weights as [`luminance`] without the integer truncation.
#[inline]
pub fn luminance_f(p: [f32; 3]) -> f32 {
    (p[0] + 2.0 * p[1] + p[2]) / 4.0
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory_with_format(&bytes, ImageFormat::Png)?.to_rgb8())
}

pub fn load_rgba(path: &Path) -> Result<RgbaImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rgba(&bytes)
}

pub fn decode_rgba(bytes: &[u8]) -> Result<RgbaImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgba8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_png_rgba(img: &RgbaImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let bytes = encode_png(img)?;
    write_file(path, &bytes)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn check_dims(expected: (u32, u32), actual: (u32, u32)) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Yellow-to-red ramp; `t` in [0, 1].
pub fn yellow_red(t: f32) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [255, (255.0 * (1.0 - t)).round() as u8, 0]
}
