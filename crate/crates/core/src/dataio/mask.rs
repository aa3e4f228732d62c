use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{row_of_y, y_of_row};

/// Binary instance mask, stored top-left row-major.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RleMask", into = "RleMask")]
pub struct BitMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

/// Serialized form: COCO-style run lengths, background first.
#[derive(Serialize, Deserialize)]
struct RleMask {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl TryFrom<RleMask> for BitMask {
    type Error = Error;

    fn try_from(value: RleMask) -> Result<Self> {
        BitMask::decode(&value.runs, value.width, value.height)
    }
}

impl From<BitMask> for RleMask {
    fn from(value: BitMask) -> Self {
        RleMask {
            width: value.width,
            height: value.height,
            runs: value.encode(),
        }
    }
}

impl std::fmt::Debug for BitMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BitMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl BitMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    /// Decode run lengths (alternating background/foreground, starting with
    /// background, row-major).
    pub fn decode(runs: &[u32], width: u32, height: u32) -> Result<Self> {
        let total = width as u64 * height as u64;
        let sum: u64 = runs.iter().map(|&r| r as u64).sum();
        if sum != total {
            return Err(Error::Format(format!(
                "run lengths sum to {sum}, expected {total} for {width}x{height}"
            )));
        }
        let mut bits = Vec::with_capacity(total as usize);
        let mut value = false;
        for &run in runs {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn encode(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for row in 0..height {
            for col in 0..width {
                bits.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    fn index(&self, col: u32, row: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    #[inline]
    pub fn get(&self, col: u32, row: u32) -> bool {
        self.bits[self.index(col, row)]
    }

    #[inline]
    pub fn set(&mut self, col: u32, row: u32, value: bool) {
        let i = self.index(col, row);
        self.bits[i] = value;
    }

    /// Bounds-checked lookup in bottom-left-origin coordinates.
    #[inline]
    pub fn contains_xy(&self, x: i32, y: i32) -> bool {
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            return false;
        }
        let row = row_of_y(y, self.height) as u32;
        self.get(x as u32, row)
    }

    /// Set a pixel in bottom-left-origin coordinates; out-of-bounds is ignored.
    pub fn set_xy(&mut self, x: i32, y: i32, value: bool) {
        if x < 0 || y < 0 || x >= self.width as i32 || y >= self.height as i32 {
            return;
        }
        let row = row_of_y(y, self.height) as u32;
        self.set(x as u32, row, value);
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixels as `(col, row)`, row-major order.
    pub fn iter_ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Foreground pixels as bottom-left-origin `(x, y)`.
    pub fn iter_xy(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        let h = self.height;
        self.iter_ones()
            .map(move |(c, r)| (c as i32, y_of_row(r, h)))
    }

    pub fn intersection_count(&self, other: &BitMask) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn union_with(&mut self, other: &BitMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn subtract(&mut self, other: &BitMask) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= !*b;
        }
    }

    pub fn is_subset_of(&self, other: &BitMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Intersection over union; two empty masks have IoU 1.
    pub fn iou(&self, other: &BitMask) -> f64 {
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.bits.iter().zip(&other.bits) {
            inter += (*a && *b) as usize;
            union += (*a || *b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Inclusive bounding box `(min_col, min_row, max_col, max_row)`.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for (c, r) in self.iter_ones() {
            bb = Some(match bb {
                None => (c, r, c, r),
                Some((c0, r0, c1, r1)) => (c0.min(c), r0.min(r), c1.max(c), r1.max(r)),
            });
        }
        bb
    }
}

/// A mask cropped to its bounding box, remembering where it sits in the frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    pub col0: u32,
    pub row0: u32,
    pub frame_width: u32,
    pub frame_height: u32,
    pub mask: BitMask,
}

impl RegionMask {
    pub fn from_frame_mask(full: &BitMask) -> Self {
        let (w, h) = full.dimensions();
        match full.bbox() {
            Some((c0, r0, c1, r1)) => {
                let mask = BitMask::from_fn(c1 - c0 + 1, r1 - r0 + 1, |c, r| full.get(c0 + c, r0 + r));
                Self {
                    col0: c0,
                    row0: r0,
                    frame_width: w,
                    frame_height: h,
                    mask,
                }
            }
            None => Self {
                col0: 0,
                row0: 0,
                frame_width: w,
                frame_height: h,
                mask: BitMask::new(0, 0),
            },
        }
    }

    pub fn to_frame_mask(&self) -> BitMask {
        let mut m = BitMask::new(self.frame_width, self.frame_height);
        for (c, r) in self.iter_ones() {
            m.set(c, r, true);
        }
        m
    }

    /// Foreground pixels in frame raster coordinates `(col, row)`.
    pub fn iter_ones(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.mask
            .iter_ones()
            .map(move |(c, r)| (self.col0 + c, self.row0 + r))
    }

    /// Foreground pixels as bottom-left-origin `(x, y)`.
    pub fn iter_xy(&self) -> impl Iterator<Item = (i32, i32)> + '_ {
        let h = self.frame_height;
        self.iter_ones().map(move |(c, r)| (c as i32, y_of_row(r, h)))
    }

    pub fn contains(&self, col: u32, row: u32) -> bool {
        col >= self.col0
            && row >= self.row0
            && col < self.col0 + self.mask.width()
            && row < self.row0 + self.mask.height()
            && self.mask.get(col - self.col0, row - self.row0)
    }

    pub fn count(&self) -> usize {
        self.mask.count()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    /// Inclusive frame bounding box `(min_col, min_row, max_col, max_row)`.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        self.mask
            .bbox()
            .map(|(c0, r0, c1, r1)| (self.col0 + c0, self.row0 + r0, self.col0 + c1, self.row0 + r1))
    }
}
