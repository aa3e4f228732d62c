//! Temporal-median background plates.

use std::ops::Range;

use image::RgbImage;
use rayon::prelude::*;

use crate::dataio::{Frame, SceneSource};
use crate::error::{Error, Result};
use crate::raster::check_dims;

/// Median window used for the shadow-free composite base.
pub const SHADOW_WINDOW_FRAMES: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct MedianPlate {
    pub center: usize,
    pub window: usize,
    pub pixels: RgbImage,
}

/// Per-pixel, per-channel median of `frames` (lower median for even counts).
pub fn median_plate(frames: &[Frame]) -> Result<MedianPlate> {
    let first = frames.first().ok_or(Error::EmptyWindow)?;
    let dims = first.pixels.dimensions();
    for f in frames {
        check_dims(dims, f.pixels.dimensions())?;
    }
    let rasters: Vec<&[u8]> = frames.iter().map(|f| f.pixels.as_raw().as_slice()).collect();
    let pixels = median_of_rasters(&rasters, dims.0, dims.1);
    Ok(MedianPlate {
        center: frames[(frames.len() - 1) / 2].index,
        window: frames.len(),
        pixels,
    })
}

fn median_of_rasters(rasters: &[&[u8]], width: u32, height: u32) -> RgbImage {
    let n = rasters.len();
    let k = (n - 1) / 2;
    let row_len = width as usize * 3;
    let mut out = vec![0u8; row_len * height as usize];
    out.par_chunks_mut(row_len).enumerate().for_each(|(row, dst)| {
        let base = row * row_len;
        let mut buf = vec![0u8; n];
        for (i, d) in dst.iter_mut().enumerate() {
            for (slot, r) in buf.iter_mut().zip(rasters) {
                *slot = r[base + i];
            }
            let (_, m, _) = buf.select_nth_unstable(k);
            *d = *m;
        }
    });
    RgbImage::from_raw(width, height, out).expect("raster size")
}

/// Frames of a window of `window` frames centered on `center`, shifted to
/// stay inside `0..count`.
pub fn window_bounds(center: usize, window: usize, count: usize) -> Range<usize> {
    let len = window.clamp(1, count.max(1));
    let start = center.saturating_sub(len / 2).min(count.saturating_sub(len));
    start..start + len
}

pub fn plate_for_frame(
    source: &dyn SceneSource,
    frame_index: usize,
    window_frames: usize,
) -> Result<MedianPlate> {
    source.check_index(frame_index)?;
    let count = source.manifest().frame_count;
    plate_over(source, window_bounds(frame_index, window_frames, count), frame_index)
}

/// Plate over an explicit frame range, recorded as centered on `center`.
pub(crate) fn plate_over(
    source: &dyn SceneSource,
    range: Range<usize>,
    center: usize,
) -> Result<MedianPlate> {
    let frames = range
        .map(|i| source.frame(i))
        .collect::<Result<Vec<_>>>()?;
    let mut plate = median_plate(&frames)?;
    plate.center = center;
    Ok(plate)
}

/// Display/compositing base: the first training frame without detections,
/// else the first one-second median.
pub fn background_image(source: &dyn SceneSource, min_confidence: f32) -> Result<RgbImage> {
    let m = source.manifest();
    let train = m.train_frames();
    for i in 0..train {
        if source.detections(i, min_confidence)?.is_empty() {
            return Ok(source.frame(i)?.pixels);
        }
    }
    let w = m.one_second_window().min(train);
    Ok(plate_over(source, 0..w, 0)?.pixels)
}
