//! Spatially varying lighting map built from probe mean colors, and
//! anchor-relative relighting of inserted objects.

use std::path::Path;
use std::sync::OnceLock;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataio::{BitMask, RegionMask};
use crate::error::{Error, Result};
use crate::occlusion::InstanceObservation;
use crate::raster::{self, luminance_f};

#[derive(Debug, Clone)]
pub struct LightingMap {
    width: u32,
    height: u32,
    sums: Vec<[f32; 3]>,
    counts: Vec<u32>,
    median: OnceLock<Option<f32>>,
}

impl PartialEq for LightingMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.sums == other.sums && self.counts == other.counts
    }
}

impl LightingMap {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            sums: vec![[0.0; 3]; n],
            counts: vec![0; n],
            median: OnceLock::new(),
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn add(&mut self, mask: &RegionMask, color: [f32; 3]) {
        self.median.take();
        for (c, r) in mask.iter_ones() {
            let i = self.idx(c, r);
            for k in 0..3 {
                self.sums[i][k] += color[k];
            }
            self.counts[i] += 1;
        }
    }

    /// Count-weighted merge: sums and counts add.
    pub fn merge(&mut self, other: &LightingMap) {
        self.median.take();
        for i in 0..self.sums.len() {
            for k in 0..3 {
                self.sums[i][k] += other.sums[i][k];
            }
            self.counts[i] += other.counts[i];
        }
    }

    #[inline]
    fn idx(&self, col: u32, row: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    pub fn count(&self, col: u32, row: u32) -> u32 {
        self.counts[self.idx(col, row)]
    }

    /// `L` at a raster pixel, `None` where no probe was seen.
    pub fn value(&self, col: u32, row: u32) -> Option<[f32; 3]> {
        let i = self.idx(col, row);
        let n = self.counts[i];
        (n > 0).then(|| self.sums[i].map(|s| s / n as f32))
    }

    pub fn sampled_pixels(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    fn sampled_values(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.sums
            .iter()
            .zip(&self.counts)
            .filter(|(_, &n)| n > 0)
            .map(|(s, &n)| s.map(|v| v / n as f32))
    }

    /// Mean of `L` over all sampled pixels.
    pub fn global_mean(&self) -> Option<[f32; 3]> {
        let mut acc = [0f64; 3];
        let mut n = 0usize;
        for v in self.sampled_values() {
            for k in 0..3 {
                acc[k] += v[k] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| acc.map(|a| (a / n as f64) as f32))
    }

    /// Median luminance of `L` over sampled pixels.
    pub fn median_luminance(&self) -> Option<f32> {
        *self.median.get_or_init(|| self.compute_median_luminance())
    }

    fn compute_median_luminance(&self) -> Option<f32> {
        let mut lums: Vec<f32> = self.sampled_values().map(luminance_f).collect();
        if lums.is_empty() {
            return None;
        }
        let k = (lums.len() - 1) / 2;
        let (_, m, _) = lums.select_nth_unstable_by(k, f32::total_cmp);
        Some(*m)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.counts.len();
        let mut out = Vec::with_capacity(8 + n * 16);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for s in &self.sums {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for c in &self.counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("lighting map header truncated".into()));
        }
        let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let n = width as usize * height as usize;
        let body = &bytes[8..];
        if body.len() != n * 16 {
            return Err(Error::Format("lighting map body length mismatch".into()));
        }
        let (sum_bytes, count_bytes) = body.split_at(n * 12);
        let word = |c: &[u8]| [c[0], c[1], c[2], c[3]];
        let sums = sum_bytes
            .chunks_exact(12)
            .map(|c| {
                [
                    f32::from_le_bytes(word(&c[0..4])),
                    f32::from_le_bytes(word(&c[4..8])),
                    f32::from_le_bytes(word(&c[8..12])),
                ]
            })
            .collect();
        let counts = count_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(word(c)))
            .collect();
        Ok(Self {
            width,
            height,
            sums,
            counts,
            median: OnceLock::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        raster::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// `L` rendered as color, black where unsampled.
    pub fn visualize(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |c, r| match self.value(c, r) {
            Some(v) => Rgb(v.map(|x| x.round().clamp(0.0, 255.0) as u8)),
            None => Rgb([0, 0, 0]),
        })
    }
}

pub fn build_lighting_map(width: u32, height: u32, observations: &[InstanceObservation]) -> LightingMap {
    let mut map = LightingMap::new(width, height);
    for obs in observations {
        map.add(&obs.refined_mask, obs.mean_color);
    }
    map
}

/// Mean `L` under `mask`, skipping unsampled pixels; falls back to the
/// scene-global mean. `None` only when the map has no samples at all.
pub fn lighting_factor(lmap: &LightingMap, mask: &BitMask) -> Option<[f32; 3]> {
    let mut acc = [0f64; 3];
    let mut n = 0usize;
    for (c, r) in mask.iter_ones() {
        if let Some(v) = lmap.value(c, r) {
            for k in 0..3 {
                acc[k] += v[k] as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return lmap.global_mean();
    }
    Some(acc.map(|a| (a / n as f64) as f32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LightingAnchor {
    reference: [f32; 3],
}

impl LightingAnchor {
    pub fn new(reference: [f32; 3]) -> Result<Self> {
        if reference.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::ZeroAnchor(reference));
        }
        Ok(Self { reference })
    }

    pub fn reference(&self) -> [f32; 3] {
        self.reference
    }
}

/// Scale every channel by `target / anchor`, clamped to [0, 255].
pub fn relight(sprite: &RgbImage, anchor: &LightingAnchor, target: [f32; 3]) -> RgbImage {
    let gain: [f32; 3] = std::array::from_fn(|k| target[k] / anchor.reference[k]);
    if gain == [1.0; 3] {
        return sprite.clone();
    }
    let mut out = sprite.clone();
    for p in out.pixels_mut() {
        for k in 0..3 {
            p.0[k] = (p.0[k] as f32 * gain[k]).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Spread of probe colors within one image region.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionAlbedoStat {
    pub col: u32,
    pub row: u32,
    pub observations: usize,
    pub mean_luminance: f32,
    pub luminance_variance: f32,
}

/// Per-region variance of probe mean luminance on a `cells` x `cells` grid,
/// keyed by each probe's bottom point. Large disparities between regions
/// with similar `L` hint that clothing color correlates with location.
pub fn region_albedo_variance(
    width: u32,
    height: u32,
    observations: &[InstanceObservation],
    cells: u32,
) -> Vec<RegionAlbedoStat> {
    let cells = cells.max(1);
    let mut bins: Vec<Vec<f32>> = vec![Vec::new(); (cells * cells) as usize];
    for o in observations {
        let cx = ((o.bottom_x / width as f64) * cells as f64).clamp(0.0, cells as f64 - 1.0) as u32;
        let row = raster::row_of_y(o.bottom_y, height).max(0) as f64;
        let cy = ((row / height as f64) * cells as f64).clamp(0.0, cells as f64 - 1.0) as u32;
        bins[(cy * cells + cx) as usize].push(luminance_f(o.mean_color));
    }
    bins.into_iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.len();
            let mean = if n > 0 { v.iter().sum::<f32>() / n as f32 } else { 0.0 };
            let var = if n > 0 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f32>() / n as f32
            } else {
                0.0
            };
            RegionAlbedoStat {
                col: i as u32 % cells,
                row: i as u32 / cells,
                observations: n,
                mean_luminance: mean,
                luminance_variance: var,
            }
        })
        .collect()
}
