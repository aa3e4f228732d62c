//! Occlusion probing: mask refinement, the per-pixel occlusion map and
//! occlusion-aware compositing.
//!
//! All y values are bottom-left origin. An object whose lowest pixel sits at
//! `y_j` is drawn at pixel `p` only when `y_j < z(p)`, where `z(p)` is the
//! largest bottom-y of any probe ever seen covering `p` (or -1).

use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::background::{plate_over, window_bounds, MedianPlate};
use crate::dataio::{BitMask, Frame, RawDetection, RegionMask, SceneSource, PROBE_CONFIDENCE};
use crate::error::{Error, Result};
use crate::layer::{row_extent, Layer};
use crate::raster::{self, check_dims, y_of_row};

pub const NEVER_OCCLUDED: i16 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserveConfig {
    /// Max-abs-channel color distance a pixel must exceed to stay in a mask.
    pub tau: u8,
    /// Refined masks smaller than this are discarded.
    pub min_area: usize,
    pub min_confidence: f32,
    /// Median window in frames; `None` means one second.
    pub window: Option<usize>,
}

impl Default for ObserveConfig {
    fn default() -> Self {
        Self {
            tau: 30,
            min_area: 50,
            min_confidence: PROBE_CONFIDENCE,
            window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceObservation {
    pub frame_index: usize,
    pub class_name: String,
    pub confidence: f32,
    /// Refined mask, cropped to its bounding box.
    pub refined_mask: RegionMask,
    /// Lowest foreground y.
    pub bottom_y: i32,
    /// Midpoint of the bottom row's foreground extent.
    pub bottom_x: f64,
    pub pixel_height: u32,
    pub mean_color: [f32; 3],
}

impl InstanceObservation {
    /// Summarize a refined mask; `None` if the mask is empty.
    pub fn from_refined(det: &RawDetection, refined: BitMask, frame: &RgbImage) -> Option<Self> {
        let (_, min_row, _, max_row) = refined.bbox()?;
        let h = refined.height();
        let (lo, hi) = row_extent(&refined, max_row);
        let mut sum = [0f64; 3];
        let mut n = 0usize;
        for (c, r) in refined.iter_ones() {
            let p = frame.get_pixel(c, r).0;
            for k in 0..3 {
                sum[k] += p[k] as f64;
            }
            n += 1;
        }
        let mean_color = sum.map(|s| (s / n as f64) as f32);
        Some(Self {
            frame_index: det.frame_index,
            class_name: det.class_name.clone(),
            confidence: det.confidence,
            bottom_y: y_of_row(max_row, h),
            bottom_x: (lo + hi) as f64 / 2.0,
            pixel_height: max_row - min_row + 1,
            mean_color,
            refined_mask: RegionMask::from_frame_mask(&refined),
        })
    }
}

/// Keep detection pixels whose color differs from the plate by more than
/// `tau` in some channel.
pub fn refine_mask(mask: &BitMask, frame: &RgbImage, plate: &RgbImage, tau: u8) -> Result<BitMask> {
    check_dims(mask.dimensions(), frame.dimensions())?;
    check_dims(mask.dimensions(), plate.dimensions())?;
    let mut out = BitMask::new(mask.width(), mask.height());
    for (c, r) in mask.iter_ones() {
        if color_distance(frame.get_pixel(c, r).0, plate.get_pixel(c, r).0) > tau {
            out.set(c, r, true);
        }
    }
    Ok(out)
}

#[inline]
pub fn color_distance(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|k| a[k].abs_diff(b[k])).max().unwrap_or(0)
}

pub fn observe_frame(
    frame: &Frame,
    detections: &[RawDetection],
    plate: &MedianPlate,
    config: &ObserveConfig,
) -> Result<Vec<InstanceObservation>> {
    let mut out = Vec::new();
    for det in detections {
        let refined = refine_mask(&det.mask, &frame.pixels, &plate.pixels, config.tau)?;
        if refined.count() < config.min_area {
            continue;
        }
        out.extend(InstanceObservation::from_refined(det, refined, &frame.pixels));
    }
    Ok(out)
}

/// Walk the training split in consecutive windows, handing each frame with
/// its detections and the window's median plate to `visit`.
pub(crate) fn for_each_window<T: Send>(
    source: &dyn SceneSource,
    window: usize,
    min_confidence: f32,
    visit: impl Fn(&Frame, Vec<RawDetection>, &MedianPlate) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let count = source.manifest().train_frames();
    let window = window.max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start < count {
        let end = (start + window).min(count);
        let center = start + window / 2;
        let range = window_bounds(center.min(count - 1), window, count);
        let plate = plate_over(source, range, center.min(count - 1))?;
        let block: Vec<T> = (start..end)
            .into_par_iter()
            .map(|i| {
                let frame = source.frame(i)?;
                let dets = source.detections(i, min_confidence)?;
                visit(&frame, dets, &plate)
            })
            .collect::<Result<_>>()?;
        out.extend(block);
        start = end;
    }
    Ok(out)
}

/// Observations over the scene's training split.
pub fn observe_scene(source: &dyn SceneSource, config: &ObserveConfig) -> Result<Vec<InstanceObservation>> {
    let window = config
        .window
        .unwrap_or_else(|| source.manifest().one_second_window());
    let per_frame = for_each_window(source, window, config.min_confidence, |frame, dets, plate| {
        observe_frame(frame, &dets, plate, config)
    })?;
    Ok(per_frame.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcclusionMap {
    width: u32,
    height: u32,
    values: Vec<i16>,
}

impl OcclusionMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![NEVER_OCCLUDED; width as usize * height as usize],
        }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<i16>) -> Result<Self> {
        if values.len() != width as usize * height as usize {
            return Err(Error::Format(format!(
                "occlusion map has {} values, expected {}",
                values.len(),
                width as u64 * height as u64
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[i16] {
        &self.values
    }

    #[inline]
    pub fn at(&self, col: u32, row: u32) -> i16 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    #[inline]
    pub fn set(&mut self, col: u32, row: u32, value: i16) {
        self.values[row as usize * self.width as usize + col as usize] = value;
    }

    /// Value at bottom-left-origin `(x, y)`.
    pub fn get(&self, x: u32, y: u32) -> i16 {
        self.at(x, self.height - 1 - y)
    }

    /// Raise the map to `bottom_y` wherever `mask` is set.
    pub fn update(&mut self, mask: &RegionMask, bottom_y: i32) {
        let y = bottom_y.clamp(i16::MIN as i32, i16::MAX as i32) as i16;
        for (c, r) in mask.iter_ones() {
            let v = &mut self.values[r as usize * self.width as usize + c as usize];
            if y > *v {
                *v = y;
            }
        }
    }

    /// Element-wise max with another map.
    pub fn merge(&mut self, other: &OcclusionMap) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = (*a).max(b);
        }
    }

    /// Object at bottom-y `bottom_y` is drawn over pixel `(col, row)`.
    #[inline]
    pub fn object_wins(&self, col: u32, row: u32, bottom_y: i32) -> bool {
        bottom_y < self.at(col, row) as i32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 2 * self.values.len());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("occlusion map header truncated".into()));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let body = &bytes[8..];
        if body.len() != 2 * width as usize * height as usize {
            return Err(Error::Format("occlusion map body length mismatch".into()));
        }
        let values = body
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self { width, height, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Pseudocolor: black where never occluded, yellow to red with
    /// increasing value.
    pub fn visualize(&self) -> RgbImage {
        let scale = (self.height.max(2) - 1) as f32;
        RgbImage::from_fn(self.width, self.height, |c, r| {
            let v = self.at(c, r);
            if v < 0 {
                Rgb([0, 0, 0])
            } else {
                Rgb(raster::yellow_red(v as f32 / scale))
            }
        })
    }
}

/// Closed form of the iterative update: per-pixel max of covering bottom-y.
pub fn build_occlusion_map(width: u32, height: u32, observations: &[InstanceObservation]) -> OcclusionMap {
    let mut map = OcclusionMap::new(width, height);
    for obs in observations {
        map.update(&obs.refined_mask, obs.bottom_y);
    }
    map
}

/// Draw `layer` over `base` where the occlusion map lets it win.
pub fn composite_object(base: &RgbImage, layer: &Layer, occmap: &OcclusionMap) -> RgbImage {
    let mut out = base.clone();
    draw_layer(&mut out, layer, Some(occmap), None);
    out
}

/// Paint a layer into `canvas`; returns the number of pixels drawn. When
/// `drawn` is given, painted pixels are also marked there.
pub(crate) fn draw_layer(
    canvas: &mut RgbImage,
    layer: &Layer,
    occmap: Option<&OcclusionMap>,
    mut drawn: Option<&mut BitMask>,
) -> usize {
    let (w, h) = canvas.dimensions();
    let mut n = 0;
    for (c, r, color) in layer.frame_pixels(w, h) {
        if occmap.is_none_or(|m| m.object_wins(c, r, layer.bottom_y)) {
            canvas.put_pixel(c, r, color);
            if let Some(d) = drawn.as_deref_mut() {
                d.set(c, r, true);
            }
            n += 1;
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn obs_with(mask: BitMask, bottom_y: i32) -> InstanceObservation {
        InstanceObservation {
            frame_index: 0,
            class_name: "person".into(),
            confidence: 1.0,
            bottom_x: 0.0,
            pixel_height: 1,
            mean_color: [0.0; 3],
            bottom_y,
            refined_mask: RegionMask::from_frame_mask(&mask),
        }
    }

    fn uniform_layer(w: u32, h: u32, bottom_y: i32, frame_h: u32) -> Layer {
        Layer {
            col0: 0,
            row0: frame_h as i32 - 1 - bottom_y - (h as i32 - 1),
            pixels: RgbImage::from_pixel(w, h, Rgb([200, 10, 10])),
            mask: BitMask::full(w, h),
            bottom_y,
        }
    }

    #[test]
    fn refine_identical_is_empty() {
        let img = RgbImage::from_pixel(6, 6, Rgb([50, 60, 70]));
        let m = BitMask::full(6, 6);
        assert!(refine_mask(&m, &img, &img, 30).unwrap().is_empty());
    }

    #[test]
    fn refine_keeps_contrasting_pixels() {
        let plate = RgbImage::from_pixel(6, 6, Rgb([0, 0, 0]));
        let mut frame = plate.clone();
        for r in 2..5 {
            frame.put_pixel(3, r, Rgb([255, 255, 255]));
        }
        let m = BitMask::full(6, 6);
        let refined = refine_mask(&m, &frame, &plate, 30).unwrap();
        assert_eq!(refined.count(), 3);
        assert!(refined.get(3, 2) && refined.get(3, 4));
    }

    #[test]
    fn refine_matches_per_pixel_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let frame = RgbImage::from_fn(20, 15, |_, _| Rgb(rng.random()));
        let plate = RgbImage::from_fn(20, 15, |_, _| Rgb(rng.random()));
        let mask = BitMask::from_fn(20, 15, |_, _| rng.random_bool(0.6));
        let refined = refine_mask(&mask, &frame, &plate, 30).unwrap();
        for r in 0..15 {
            for c in 0..20 {
                let a = frame.get_pixel(c, r).0;
                let b = plate.get_pixel(c, r).0;
                let far = (0..3).any(|k| (a[k] as i32 - b[k] as i32).abs() > 30);
                assert_eq!(refined.get(c, r), mask.get(c, r) && far);
            }
        }
        assert!(refined.is_subset_of(&mask));
    }

    #[test]
    fn bottom_row_is_y_zero() {
        let mask = BitMask::from_fn(5, 10, |c, r| c == 2 && r >= 6);
        let img = RgbImage::from_pixel(5, 10, Rgb([128, 128, 128]));
        let det = RawDetection {
            frame_index: 3,
            class_name: "person".into(),
            confidence: 0.9,
            mask: mask.clone(),
        };
        let o = InstanceObservation::from_refined(&det, mask, &img).unwrap();
        assert_eq!(o.bottom_y, 0);
        assert_eq!(o.pixel_height, 4);
        assert_eq!(o.bottom_x, 2.0);
        assert_eq!(o.mean_color, [128.0, 128.0, 128.0]);
    }

    #[test]
    fn map_takes_max() {
        let m = BitMask::full(4, 4);
        let a = build_occlusion_map(4, 4, &[obs_with(m.clone(), 10), obs_with(m.clone(), 40)]);
        let b = build_occlusion_map(4, 4, &[obs_with(m.clone(), 40), obs_with(m, 10)]);
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v == 40));
        let empty = build_occlusion_map(4, 4, &[]);
        assert!(empty.values().iter().all(|&v| v == NEVER_OCCLUDED));
    }

    #[test]
    fn map_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let obs: Vec<_> = (0..1000)
            .map(|_| {
                let x0 = rng.random_range(0..32);
                let y0 = rng.random_range(0..32);
                let w = rng.random_range(1..10);
                let h = rng.random_range(1..12);
                let m = BitMask::from_fn(32, 32, |c, r| {
                    c >= x0 && c < x0 + w && r >= y0 && r < y0 + h && rng.random_bool(0.8)
                });
                obs_with(m, rng.random_range(0..32))
            })
            .collect();
        let map = build_occlusion_map(32, 32, &obs);
        for r in 0..32 {
            for c in 0..32 {
                let expect = obs
                    .iter()
                    .filter(|o| o.refined_mask.contains(c, r))
                    .map(|o| o.bottom_y as i16)
                    .max()
                    .unwrap_or(-1);
                assert_eq!(map.at(c, r), expect);
            }
        }
    }

    #[test]
    fn composite_strict_inequality() {
        let base = RgbImage::from_pixel(4, 60, Rgb([1, 2, 3]));
        let mut occ = OcclusionMap::new(4, 60);
        occ.values.iter_mut().for_each(|v| *v = 40);
        let near = composite_object(&base, &uniform_layer(4, 5, 5, 60), &occ);
        assert_eq!(near.pixels().filter(|p| p.0 == [200, 10, 10]).count(), 20);
        let far = composite_object(&base, &uniform_layer(4, 5, 50, 60), &occ);
        assert_eq!(far, base);
        let tie = composite_object(&base, &uniform_layer(4, 5, 40, 60), &occ);
        assert_eq!(tie, base);
    }

    #[test]
    fn never_occluded_background_wins() {
        let base = RgbImage::from_pixel(4, 20, Rgb([1, 2, 3]));
        let occ = OcclusionMap::new(4, 20);
        assert_eq!(composite_object(&base, &uniform_layer(4, 5, 0, 20), &occ), base);
    }

    #[test]
    fn partial_occlusion_on_column_boundary() {
        let base = RgbImage::from_pixel(6, 30, Rgb([0, 0, 0]));
        let mut occ = OcclusionMap::new(6, 30);
        for r in 0..30 {
            for c in 0..6 {
                occ.set(c, r, if c < 3 { 20 } else { 5 });
            }
        }
        let out = composite_object(&base, &uniform_layer(6, 4, 10, 30), &occ);
        for r in 0..30 {
            for c in 0..6 {
                let drawn = out.get_pixel(c, r).0 == [200, 10, 10];
                let in_mask = (16..20).contains(&r);
                assert_eq!(drawn, in_mask && c < 3, "col {c} row {r}");
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut m = OcclusionMap::new(3, 2);
        m.set(1, 0, 17);
        m.set(2, 1, -1);
        let back = OcclusionMap::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert!(OcclusionMap::from_bytes(&[0, 1]).is_err());
    }

    proptest! {
        #[test]
        fn order_independent_and_monotone(
            items in proptest::collection::vec((any::<u64>(), 0i32..16), 1..20),
            extra in (any::<u64>(), 0i32..16),
        ) {
            let mk = |(bits, y): (u64, i32)| obs_with(BitMask::from_fn(8, 8, |c, r| bits >> (r * 8 + c) & 1 == 1), y);
            let obs: Vec<_> = items.iter().copied().map(mk).collect();
            let mut rev = obs.clone();
            rev.reverse();
            let a = build_occlusion_map(8, 8, &obs);
            prop_assert_eq!(&a, &build_occlusion_map(8, 8, &rev));
            let mut more = obs.clone();
            more.push(mk(extra));
            let b = build_occlusion_map(8, 8, &more);
            prop_assert!(a.values().iter().zip(b.values()).all(|(x, y)| y >= x));
        }

        #[test]
        fn closer_never_hides(values in proptest::collection::vec(-1i16..30, 64), y in 0i32..30, dy in 0i32..10) {
            let occ = OcclusionMap::from_values(8, 8, values).unwrap();
            for r in 0..8 {
                for c in 0..8 {
                    if occ.object_wins(c, r, y) {
                        prop_assert!(occ.object_wins(c, r, y - dy));
                    }
                }
            }
        }
    }
}
