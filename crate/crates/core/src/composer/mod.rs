//! Object insertion: scale, relight, occlusion and shadow, in that order.

mod products;

use std::sync::Arc;
use std::time::{Duration, Instant};

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};

pub use products::{
    build_products, build_scene_dir, BuildConfig, ProductsInfo, SceneProducts, StageFailure, BACKGROUND_FILE,
    LIGHTING_FILE, OCCLUSION_FILE, PRODUCTS_FILE, PRODUCTS_VERSION,
};

use crate::dataio::BitMask;
use crate::error::{Error, Result, Stage};
use crate::groundplane::{predict_height, relative_rescale};
use crate::layer::Layer;
use crate::lighting::{lighting_factor, relight, LightingAnchor};
use crate::occlusion::draw_layer;
use crate::shadow::{apply_gain_bias, synthesize_gain_bias, GainBias};

/// Alpha at or above this is part of the sprite.
pub const ALPHA_THRESHOLD: u8 = 128;

/// A cut-out object: colors plus a binary mask, cropped to the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub pixels: RgbImage,
    pub mask: BitMask,
}

impl Sprite {
    pub fn from_rgba(img: &RgbaImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let full = BitMask::from_fn(w, h, |c, r| img.get_pixel(c, r).0[3] >= ALPHA_THRESHOLD);
        let (c0, r0, c1, r1) = full
            .bbox()
            .ok_or_else(|| Error::InvalidPlacement("sprite has no opaque pixels".into()))?;
        let (cw, ch) = (c1 - c0 + 1, r1 - r0 + 1);
        let pixels = RgbImage::from_fn(cw, ch, |c, r| {
            let p = img.get_pixel(c0 + c, r0 + r).0;
            image::Rgb([p[0], p[1], p[2]])
        });
        let mask = BitMask::from_fn(cw, ch, |c, r| full.get(c0 + c, r0 + r));
        Ok(Self { pixels, mask })
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        Self::from_rgba(&crate::raster::decode_rgba(bytes)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_rgba(&crate::raster::load_rgba(path)?)
    }

    pub fn height(&self) -> u32 {
        self.mask.height()
    }

    /// Bilinear, aspect-preserving resample to `rows` rows; the mask is
    /// resampled alongside and re-thresholded at one half.
    pub fn scaled(&self, rows: u32) -> Sprite {
        let (w, h) = self.pixels.dimensions();
        let rows = rows.max(1);
        let cols = ((w as f64 * rows as f64 / h as f64).round() as u32).max(1);
        if (cols, rows) == (w, h) {
            return self.clone();
        }
        let pixels = imageops::resize(&self.pixels, cols, rows, FilterType::Triangle);
        let alpha = GrayImage::from_fn(w, h, |c, r| Luma([if self.mask.get(c, r) { 255 } else { 0 }]));
        let alpha = imageops::resize(&alpha, cols, rows, FilterType::Triangle);
        let mask = BitMask::from_fn(cols, rows, |c, r| alpha.get_pixel(c, r).0[0] >= ALPHA_THRESHOLD);
        Sprite { pixels, mask }
    }
}

/// Per-stage switches; everything off is a raw paste.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub scale: bool,
    pub lighting: bool,
    pub occlusion: bool,
    pub shadow: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self::all()
    }
}

impl Stages {
    pub fn all() -> Self {
        Self {
            scale: true,
            lighting: true,
            occlusion: true,
            shadow: true,
        }
    }

    pub fn none() -> Self {
        Self {
            scale: false,
            lighting: false,
            occlusion: false,
            shadow: false,
        }
    }
}

/// An inserted object. `(x, y)` is its bottom-middle point, bottom-left
/// origin. The reference height and lighting anchor are captured where the
/// object was first placed.
#[derive(Debug, Clone)]
pub struct Placement {
    pub sprite_id: String,
    pub sprite: Arc<Sprite>,
    pub x: f64,
    pub y: f64,
    pub height_override: f64,
    /// Extra brightness multiplier chosen by the user.
    pub brightness: f32,
    pub anchor: Option<LightingAnchor>,
    pub reference: (f64, f64),
    /// Height the sprite gets at `reference`.
    pub reference_height: f64,
}

impl Placement {
    pub fn new(products: &SceneProducts, sprite_id: impl Into<String>, sprite: Arc<Sprite>, x: f64, y: f64) -> Result<Self> {
        check_position(products, x, y)?;
        let reference_height = match &products.info.plane {
            Some(plane) => predict_height(plane, x, y).map_err(|e| e.at_stage(Stage::Scale))?,
            None => sprite.height() as f64,
        };
        let mut placement = Self {
            sprite_id: sprite_id.into(),
            sprite,
            x,
            y,
            height_override: 1.0,
            brightness: 1.0,
            anchor: None,
            reference: (x, y),
            reference_height,
        };
        let layer = placement.geometry(products, products.info.plane.is_some())?;
        let (w, h) = products.dimensions();
        placement.anchor = lighting_factor(&products.lighting, &layer.frame_mask(w, h)).and_then(|l| LightingAnchor::new(l).ok());
        Ok(placement)
    }

    pub fn set_height_override(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidPlacement(format!("height override must be positive, got {factor}")));
        }
        self.height_override = factor;
        Ok(())
    }

    pub fn set_brightness(&mut self, factor: f32) -> Result<()> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidPlacement(format!("brightness must be positive, got {factor}")));
        }
        self.brightness = factor;
        Ok(())
    }

    /// Pixel height at the current position.
    pub fn target_height(&self, products: &SceneProducts) -> Result<f64> {
        let plane = products.plane()?;
        let factor = relative_rescale(plane, self.reference, self.reference_height, (self.x, self.y))
            .map_err(|e| e.at_stage(Stage::Scale))?;
        Ok(self.reference_height * factor * self.height_override)
    }

    /// The placed, unlit layer.
    fn geometry(&self, products: &SceneProducts, scale: bool) -> Result<Layer> {
        let sprite = if scale {
            let rows = self.target_height(products)?.round().max(1.0) as u32;
            self.sprite.scaled(rows)
        } else {
            (*self.sprite).clone()
        };
        let (_, h) = products.dimensions();
        Ok(Layer::place(sprite.pixels, sprite.mask, self.x, self.y.round() as i32, h))
    }

    /// The placed layer after scale and relight.
    pub fn layer(&self, products: &SceneProducts, stages: Stages) -> Result<Layer> {
        Ok(self.layer_timed(products, stages)?.0)
    }

    fn layer_timed(&self, products: &SceneProducts, stages: Stages) -> Result<(Layer, Duration, Duration)> {
        let t0 = Instant::now();
        let mut layer = self.geometry(products, stages.scale)?;
        let scaled = t0.elapsed();
        let t1 = Instant::now();
        if stages.lighting {
            if let Some(anchor) = &self.anchor {
                let (w, h) = products.dimensions();
                if let Some(mut target) = lighting_factor(&products.lighting, &layer.frame_mask(w, h)) {
                    target.iter_mut().for_each(|t| *t *= self.brightness);
                    layer.pixels = relight(&layer.pixels, anchor, target);
                }
            }
        }
        Ok((layer, scaled, t1.elapsed()))
    }
}

pub fn check_position(products: &SceneProducts, x: f64, y: f64) -> Result<()> {
    let (w, h) = products.dimensions();
    if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
        return Err(Error::InvalidPlacement(format!("({x}, {y}) is outside the {w}x{h} image")).at_stage(Stage::Scale));
    }
    if let Some(plane) = &products.info.plane {
        predict_height(plane, x, y).map_err(|e| e.at_stage(Stage::Scale))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub scale: Duration,
    pub lighting: Duration,
    pub occlusion: Duration,
    pub shadow: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeResult {
    /// Scaled, relit, occlusion-tested composite before shadows.
    pub i_comp: RgbImage,
    pub i_final: RgbImage,
    pub timings: StageTimings,
}

/// Insert a sprite at `(x, y)`.
pub fn place(
    products: &SceneProducts,
    sprite_id: impl Into<String>,
    sprite: Arc<Sprite>,
    x: f64,
    y: f64,
    stages: Stages,
) -> Result<(Placement, CompositeResult)> {
    let placement = Placement::new(products, sprite_id, sprite, x, y)?;
    let result = render_composite(products, std::slice::from_ref(&placement), stages)?;
    Ok((placement, result))
}

/// Move a placement; on error it is left untouched.
pub fn move_placement(
    products: &SceneProducts,
    placement: &mut Placement,
    x: f64,
    y: f64,
    stages: Stages,
) -> Result<CompositeResult> {
    check_position(products, x, y)?;
    let mut moved = placement.clone();
    moved.x = x;
    moved.y = y;
    let result = render_composite(products, std::slice::from_ref(&moved), stages)?;
    *placement = moved;
    Ok(result)
}

/// Composite all placements over the scene background.
///
/// Objects are drawn farthest first (decreasing contact y, ties in list
/// order). Their shadows are combined by per-pixel minimum gain and applied
/// once, never onto inserted objects.
pub fn render_composite(products: &SceneProducts, placements: &[Placement], stages: Stages) -> Result<CompositeResult> {
    let start = Instant::now();
    let mut timings = StageTimings::default();
    let (w, h) = products.dimensions();

    let mut layers = Vec::with_capacity(placements.len());
    for p in placements {
        let (layer, scaled, lit) = p.layer_timed(products, stages)?;
        timings.scale += scaled;
        timings.lighting += lit;
        layers.push(layer);
    }
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(layers[i].bottom_y));

    let t = Instant::now();
    let mut i_comp = products.background.clone();
    let mut drawn = BitMask::new(w, h);
    let occmap = stages.occlusion.then_some(&products.occlusion);
    for &i in &order {
        draw_layer(&mut i_comp, &layers[i], occmap, Some(&mut drawn));
    }
    timings.occlusion = t.elapsed();

    let t = Instant::now();
    let i_final = if stages.shadow && !layers.is_empty() {
        let mut gb = GainBias::identity(w, h);
        for layer in &layers {
            let g = synthesize_gain_bias(
                products.shadow(),
                &layer.frame_mask(w, h),
                layer.bottom_y,
                &products.lighting,
                &products.occlusion,
            );
            gb.combine_min(&g);
        }
        gb.clear(&drawn);
        apply_gain_bias(&i_comp, &gb)?
    } else {
        i_comp.clone()
    };
    timings.shadow = t.elapsed();
    timings.total = start.elapsed();

    Ok(CompositeResult {
        i_comp,
        i_final,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groundplane::PlaneModel;
    use crate::lighting::LightingMap;
    use crate::occlusion::OcclusionMap;
    use crate::shadow::{ShadowConfig, ShadowModel};
    use image::{Rgb, Rgba};

    fn products(w: u32, h: u32) -> SceneProducts {
        let mut lighting = LightingMap::new(w, h);
        lighting.add(
            &crate::dataio::RegionMask::from_frame_mask(&BitMask::full(w, h)),
            [150.0, 150.0, 150.0],
        );
        SceneProducts {
            info: ProductsInfo {
                version: PRODUCTS_VERSION,
                scene: crate::dataio::SceneManifest::new(w, h, 15.0, 1),
                train_frames: 1,
                observations: 0,
                plane: Some(PlaneModel::from_coefficients(0.0, -0.5, 40.0)),
                shadow: ShadowModel::directional(0.8, 0.1, 0.5, &ShadowConfig::default()),
                failures: Vec::new(),
                background_file: BACKGROUND_FILE.into(),
                occlusion_file: OCCLUSION_FILE.into(),
                lighting_file: LIGHTING_FILE.into(),
                config: BuildConfig::default(),
            },
            background: RgbImage::from_pixel(w, h, Rgb([100, 100, 100])),
            occlusion: OcclusionMap::from_values(w, h, vec![i16::MAX; (w * h) as usize]).unwrap(),
            lighting,
        }
    }

    fn sprite(w: u32, h: u32, color: [u8; 3]) -> Arc<Sprite> {
        let img = RgbaImage::from_fn(w + 2, h + 2, |c, r| {
            if c >= 1 && r >= 1 && c <= w && r <= h {
                Rgba([color[0], color[1], color[2], 255])
            } else {
                Rgba([0, 0, 0, 0])
            }
        });
        Arc::new(Sprite::from_rgba(&img).unwrap())
    }

    #[test]
    fn sprite_crops_to_alpha() {
        let s = sprite(5, 9, [200, 10, 10]);
        assert_eq!(s.pixels.dimensions(), (5, 9));
        assert_eq!(s.mask.count(), 45);
        let blank = RgbaImage::from_pixel(4, 4, Rgba([1, 2, 3, 127]));
        assert!(Sprite::from_rgba(&blank).is_err());
    }

    #[test]
    fn scaling_preserves_aspect() {
        let s = sprite(10, 40, [200, 10, 10]).scaled(20);
        assert_eq!(s.pixels.dimensions(), (5, 20));
        assert_eq!(s.mask.count(), 100);
    }

    #[test]
    fn placed_height_follows_plane() {
        let p = products(80, 80);
        let (placement, result) = place(&p, "s", sprite(6, 12, [220, 30, 30]), 40.0, 10.0, Stages::all()).unwrap();
        assert!((placement.target_height(&p).unwrap() - 35.0).abs() < 1e-9);
        let layer = placement.layer(&p, Stages::all()).unwrap();
        assert_eq!(layer.mask.height(), 35);
        assert_ne!(result.i_final, result.i_comp);
    }

    #[test]
    fn all_stages_off_is_raw_paste() {
        let p = products(60, 60);
        let s = sprite(4, 8, [10, 200, 10]);
        let (placement, result) = place(&p, "s", s.clone(), 20.0, 30.0, Stages::none()).unwrap();
        let layer = Layer::place(s.pixels.clone(), s.mask.clone(), 20.0, 30, 60);
        let mut expect = p.background.clone();
        for (c, r, color) in layer.frame_pixels(60, 60) {
            expect.put_pixel(c, r, color);
        }
        assert_eq!(result.i_final, expect);
        assert_eq!(result.i_comp, expect);
        assert_eq!(placement.layer(&p, Stages::none()).unwrap(), layer);
    }

    #[test]
    fn shadow_off_means_final_equals_comp() {
        let p = products(60, 60);
        let stages = Stages {
            shadow: false,
            ..Stages::all()
        };
        let (_, r) = place(&p, "s", sprite(4, 8, [10, 200, 10]), 20.0, 10.0, stages).unwrap();
        assert_eq!(r.i_final, r.i_comp);
    }

    #[test]
    fn move_back_restores_composite() {
        let p = products(80, 80);
        let (mut pl, first) = place(&p, "s", sprite(6, 12, [220, 30, 30]), 40.0, 10.0, Stages::all()).unwrap();
        move_placement(&p, &mut pl, 20.0, 30.0, Stages::all()).unwrap();
        let back = move_placement(&p, &mut pl, 40.0, 10.0, Stages::all()).unwrap();
        assert_eq!(back.i_final, first.i_final);
    }

    #[test]
    fn off_plane_move_leaves_placement_unchanged() {
        let mut p = products(80, 80);
        p.info.plane = Some(PlaneModel::from_coefficients(0.0, -0.5, 30.0));
        let (mut pl, _) = place(&p, "s", sprite(6, 12, [220, 30, 30]), 40.0, 10.0, Stages::all()).unwrap();
        let err = move_placement(&p, &mut pl, 40.0, 70.0, Stages::all()).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Scale));
        assert!(matches!(err.root(), Error::OffPlane { .. }));
        assert_eq!((pl.x, pl.y), (40.0, 10.0));
    }

    #[test]
    fn nearer_object_drawn_on_top() {
        let p = products(80, 80);
        let near = Placement::new(&p, "a", sprite(6, 12, [250, 0, 0]), 40.0, 10.0).unwrap();
        let far = Placement::new(&p, "b", sprite(6, 12, [0, 0, 250]), 40.0, 14.0).unwrap();
        let stages = Stages {
            shadow: false,
            ..Stages::all()
        };
        for list in [vec![near.clone(), far.clone()], vec![far, near]] {
            let r = render_composite(&p, &list, stages).unwrap();
            // bottom row of the nearer object is red
            let row = crate::raster::row_of_y(10, 80) as u32;
            assert_eq!(r.i_comp.get_pixel(40, row).0, [250, 0, 0]);
            let row = crate::raster::row_of_y(20, 80) as u32;
            assert_eq!(r.i_comp.get_pixel(40, row).0, [250, 0, 0]);
        }
    }

    #[test]
    fn overlapping_shadows_darken_once() {
        let p = products(120, 80);
        let a = Placement::new(&p, "a", sprite(6, 12, [250, 0, 0]), 40.0, 10.0).unwrap();
        let b = Placement::new(&p, "b", sprite(6, 12, [0, 0, 250]), 44.0, 10.0).unwrap();
        let r = render_composite(&p, &[a, b], Stages::all()).unwrap();
        let g = p.shadow().gain;
        for (q, base) in r.i_final.pixels().zip(r.i_comp.pixels()) {
            for k in 0..3 {
                let floor = (g * base.0[k] as f32 + 0.5).floor() as u8;
                assert!(q.0[k] >= floor);
            }
        }
    }

    #[test]
    fn rendering_is_pure() {
        let p = products(80, 80);
        let a = Placement::new(&p, "a", sprite(6, 12, [250, 0, 0]), 40.0, 10.0).unwrap();
        let r1 = render_composite(&p, std::slice::from_ref(&a), Stages::all()).unwrap();
        let r2 = render_composite(&p, std::slice::from_ref(&a), Stages::all()).unwrap();
        assert_eq!(r1.i_final, r2.i_final);
    }
}
