use image::{Rgb, RgbImage};

use crate::dataio::BitMask;
use crate::raster::{row_of_y, y_of_row};

/// An object raster positioned in frame coordinates.
///
/// `col0`/`row0` locate the layer's top-left pixel in the frame raster and
/// may be negative or past the frame edge; pixels outside are clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub col0: i32,
    pub row0: i32,
    pub pixels: RgbImage,
    pub mask: BitMask,
    /// Bottom-left-origin y of the contact point.
    pub bottom_y: i32,
}

impl Layer {
    /// Place `pixels`/`mask` so the lowest mask row sits at `bottom_y` and the
    /// bottom-row extent is centered on `x`.
    pub fn place(pixels: RgbImage, mask: BitMask, x: f64, bottom_y: i32, frame_height: u32) -> Self {
        let (lowest_row, bottom_mid) = match mask.bbox() {
            Some((_, _, _, max_row)) => {
                let (lo, hi) = row_extent(&mask, max_row);
                (max_row as i32, (lo + hi) as f64 / 2.0)
            }
            None => (mask.height() as i32 - 1, (mask.width() as f64 - 1.0) / 2.0),
        };
        let col0 = (x - bottom_mid).round() as i32;
        let row0 = row_of_y(bottom_y, frame_height) - lowest_row;
        Self {
            col0,
            row0,
            pixels,
            mask,
            bottom_y,
        }
    }

    /// Mask pixels that land inside a `width` x `height` frame, as
    /// `(frame_col, frame_row, color)`.
    pub fn frame_pixels(&self, width: u32, height: u32) -> impl Iterator<Item = (u32, u32, Rgb<u8>)> + '_ {
        self.mask.iter_ones().filter_map(move |(c, r)| {
            let fc = self.col0 + c as i32;
            let fr = self.row0 + r as i32;
            if fc < 0 || fr < 0 || fc >= width as i32 || fr >= height as i32 {
                return None;
            }
            Some((fc as u32, fr as u32, *self.pixels.get_pixel(c, r)))
        })
    }

    pub fn frame_mask(&self, width: u32, height: u32) -> BitMask {
        let mut m = BitMask::new(width, height);
        for (c, r, _) in self.frame_pixels(width, height) {
            m.set(c, r, true);
        }
        m
    }

    /// Bottom-left-origin y of the layer's top mask row in the frame.
    pub fn top_y(&self, frame_height: u32) -> Option<i32> {
        let (_, min_row, _, _) = self.mask.bbox()?;
        Some(y_of_row((self.row0 + min_row as i32).max(0) as u32, frame_height))
    }
}

/// Inclusive column extent of mask pixels on `row`.
pub(crate) fn row_extent(mask: &BitMask, row: u32) -> (u32, u32) {
    let mut lo = u32::MAX;
    let mut hi = 0;
    for c in 0..mask.width() {
        if mask.get(c, row) {
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    (lo, hi)
}
