//! Synthetic fixed-camera scenes with exact ground truth.
//!
//! A pinhole camera sits at the origin with its principal point at the image
//! center. The ground is the world plane `aX + bY + cZ = 1`; a person of
//! height `H` standing at image point `(u, v)` (centered, y up) appears
//! `H·(a·u + b·v + c·f)` pixels tall. Sprites walk straight image-space
//! trajectories on that plane, static boxes occlude them, a piecewise-constant
//! brightness field modulates everything, and every sprite casts a sheared
//! shadow onto the ground.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{write_detections, write_manifest, BitMask, Dataset, Frame, RawDetection, SceneManifest, SceneSource};
use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::raster::{row_of_y, save_png, write_file, y_of_row};
use crate::shadow::shear_point;

/// Axis-aligned region of constant illumination, bottom-left coordinates,
/// half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrightnessRegion {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
    pub factor: f32,
}

impl BrightnessRegion {
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// A static box standing on the ground. Columns `x0..x1`, rows
/// `bottom_y..top_y`; its ground contact row `bottom_y` is its depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occluder {
    pub x0: i32,
    pub x1: i32,
    pub bottom_y: i32,
    pub top_y: i32,
    pub color: [u8; 3],
}

impl Occluder {
    pub fn contains(&self, x: i32, y: i32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.bottom_y && y < self.top_y
    }

    /// Whether this box hides a sprite whose contact row is `bottom_y`.
    pub fn in_front_of(&self, bottom_y: i32) -> bool {
        self.bottom_y < bottom_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Silhouette {
    Rectangle,
    /// Body with a round head on top.
    Keyhole,
}

impl Silhouette {
    /// Mask of a `width` x `height` sprite. The bottom row and the center
    /// column are always fully set.
    pub fn mask(self, width: u32, height: u32) -> BitMask {
        match self {
            Silhouette::Rectangle => BitMask::full(width, height),
            Silhouette::Keyhole => {
                let body = ((height as f64) * 0.72).round().max(1.0) as u32;
                let head = height - body.min(height);
                let r = (width as f64 / 2.0).min(head as f64 / 2.0);
                let cx = (width as f64 - 1.0) / 2.0;
                let cy = head as f64 / 2.0 - 0.5;
                BitMask::from_fn(width, height, |c, row| {
                    if row >= head || c as f64 == cx.floor() {
                        return true;
                    }
                    let dx = c as f64 - cx;
                    let dy = row as f64 - cy;
                    dx * dx + dy * dy <= r * r + 0.25
                })
            }
        }
    }
}

/// One sprite walking a straight line between two ground points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteTrack {
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub albedo: [u8; 3],
    pub height_multiplier: f64,
    /// Width over height.
    pub aspect: f64,
    pub shape: Silhouette,
    pub class_name: String,
}

impl SpriteTrack {
    pub fn position(&self, t: usize) -> Option<[f64; 2]> {
        if t < self.start_frame || t >= self.end_frame {
            return None;
        }
        let span = (self.end_frame - self.start_frame).max(2) - 1;
        let s = (t - self.start_frame) as f64 / span as f64;
        Some([
            self.from[0] + s * (self.to[0] - self.from[0]),
            self.from[1] + s * (self.to[1] - self.from[1]),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub focal_length: f64,
    /// World ground plane `(a, b, c)` with `aX + bY + cZ = 1`.
    pub ground_plane: [f64; 3],
    pub person_height: f64,
    /// Image-space light direction `(d_x, d_y, d_z)` in pixels, `d_z < 0`.
    /// A caster point `d` pixels above its contact row lands
    /// `d·(d_x, d_y)/(-d_z)` away on the ground.
    pub light_direction: [f64; 3],
    pub shadow_gain: f32,
    pub brightness: Vec<BrightnessRegion>,
    pub occluders: Vec<Occluder>,
    pub ground_color: [u8; 3],
    /// Amplitude of the deterministic ground texture.
    pub ground_texture: u8,
    pub tracks: Vec<SpriteTrack>,
    pub seed: u64,
}

impl SynthConfig {
    /// An empty scene whose ground spans the lower half of the frame, with
    /// people about 0.6·height tall at the bottom edge.
    pub fn new(width: u32, height: u32) -> Self {
        let person_height = 1.7;
        let cy = height as f64 / 2.0;
        let camera_height = person_height * cy / (0.6 * height as f64);
        Self {
            width,
            height,
            fps: 15.0,
            focal_length: width as f64,
            ground_plane: [0.01, -1.0 / camera_height, 0.0],
            person_height,
            light_direction: [0.8, 0.1, -1.0],
            shadow_gain: 0.5,
            brightness: Vec::new(),
            occluders: Vec::new(),
            ground_color: [100, 105, 95],
            ground_texture: 4,
            tracks: Vec::new(),
            seed: 0,
        }
    }

    /// Height plane `(a', b', c')` in bottom-left image coordinates.
    pub fn image_plane(&self) -> [f64; 3] {
        let [a, b, c] = self.ground_plane;
        let h = self.person_height;
        let (ap, bp, cp) = (a * h, b * h, c * h * self.focal_length);
        let (cx, cy) = self.principal_point();
        [ap, bp, cp - ap * cx - bp * cy]
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn plane_height(&self, x: f64, y: f64) -> f64 {
        let [a, b, c] = self.image_plane();
        a * x + b * y + c
    }

    /// Shadow shear `(k_x, k_y)` implied by the light direction.
    pub fn shear(&self) -> (f64, f64) {
        let [dx, dy, dz] = self.light_direction;
        (dx / -dz, dy / -dz)
    }

    pub fn brightness_at(&self, x: i32, y: i32) -> f32 {
        self.brightness
            .iter()
            .rev()
            .find(|r| r.contains(x, y))
            .map_or(1.0, |r| r.factor)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SynthConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.shadow_gain > 0.0 && self.shadow_gain < 1.0) {
            return bad(format!("shadow gain {} outside (0, 1)", self.shadow_gain));
        }
        if self.light_direction[2] >= 0.0 {
            return bad("light must travel downward (d_z < 0)".into());
        }
        if let Some(r) = self.brightness.iter().find(|r| !(r.factor > 0.0 && r.factor <= 1.0)) {
            return bad(format!("brightness factor {} outside (0, 1]", r.factor));
        }
        for (i, t) in self.tracks.iter().enumerate() {
            // height is affine along a straight track, so the endpoints decide
            for p in [t.from, t.to] {
                let h = self.plane_height(p[0], p[1]) * t.height_multiplier;
                if h < 1.0 {
                    return bad(format!(
                        "sprite {i} off ground plane at ({:.1}, {:.1}): height {h:.2}",
                        p[0], p[1]
                    ));
                }
            }
            if t.end_frame <= t.start_frame || t.aspect <= 0.0 {
                return bad(format!("sprite {i} has an empty schedule or bad aspect"));
            }
        }
        Ok(())
    }

    pub fn truth(&self) -> SceneTruth {
        let (k_x, k_y) = self.shear();
        SceneTruth {
            plane: self.image_plane(),
            shadow_gain: self.shadow_gain,
            shear: [k_x, k_y],
            brightness: self.brightness.clone(),
            occluders: self.occluders.clone(),
            tracks: self.tracks.clone(),
        }
    }
}

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub plane: [f64; 3],
    pub shadow_gain: f32,
    pub shear: [f64; 2],
    pub brightness: Vec<BrightnessRegion>,
    pub occluders: Vec<Occluder>,
    pub tracks: Vec<SpriteTrack>,
}

impl SceneTruth {
    pub const FILE: &'static str = "truth.json";

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Random walkers crossing the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerSpec {
    pub frames: usize,
    /// Expected number of sprites on screen at once.
    pub concurrent: f64,
    /// Range of contact rows the walkers use.
    pub band: (f64, f64),
    /// Horizontal extent of the walks.
    pub x_range: (f64, f64),
    pub duration: (usize, usize),
    /// Standard deviation of the multiplicative height noise.
    pub height_noise: f64,
    pub aspect: (f64, f64),
    pub seed: u64,
}

impl WalkerSpec {
    pub fn new(config: &SynthConfig, frames: usize) -> Self {
        let h = config.height as f64;
        let w = config.width as f64;
        Self {
            frames,
            concurrent: 3.0,
            band: (0.02 * h, 0.25 * h),
            x_range: (0.08 * w, 0.92 * w),
            duration: (40, 120),
            height_noise: 0.05,
            aspect: (0.3, 0.45),
            seed: config.seed,
        }
    }

    pub fn generate(&self) -> Vec<SpriteTrack> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(1.0, self.height_noise.max(0.0)).expect("finite sigma");
        let mean_duration = (self.duration.0 + self.duration.1) as f64 / 2.0;
        let count = (self.concurrent * (self.frames as f64 + mean_duration) / mean_duration).round() as usize;
        (0..count)
            .map(|_| {
                let duration = rng.random_range(self.duration.0..=self.duration.1);
                let start = rng.random_range(0..self.frames + duration) as i64 - duration as i64;
                let start_frame = start.max(0) as usize;
                let end_frame = (start + duration as i64).max(start_frame as i64 + 1) as usize;
                let (left, right) = self.x_range;
                let (y0, y1) = (
                    rng.random_range(self.band.0..=self.band.1),
                    rng.random_range(self.band.0..=self.band.1),
                );
                let (from, to) = if rng.random_bool(0.5) {
                    ([left, y0], [right, y1])
                } else {
                    ([right, y0], [left, y1])
                };
                let full = [from, to];
                let albedo = [
                    rng.random_range(190..=255),
                    rng.random_range(190..=255),
                    rng.random_range(190..=255),
                ];
                let multiplier = if self.height_noise > 0.0 {
                    noise.sample(&mut rng).max(0.5)
                } else {
                    1.0
                };
                let aspect = rng.random_range(self.aspect.0..=self.aspect.1);
                let shape = if rng.random_bool(0.5) {
                    Silhouette::Keyhole
                } else {
                    Silhouette::Rectangle
                };
                // walks already under way at frame 0 or still going at the end are clipped
                let skipped = (start_frame as i64 - start) as f64 / duration as f64;
                let along = |s: f64| {
                    [
                        full[0][0] + s * (full[1][0] - full[0][0]),
                        full[0][1] + s * (full[1][1] - full[0][1]),
                    ]
                };
                let stop = (end_frame.min(self.frames.max(1)) as i64 - start) as f64 / duration as f64;
                SpriteTrack {
                    start_frame,
                    end_frame: end_frame.min(self.frames.max(1)).max(start_frame + 1),
                    from: along(skipped.clamp(0.0, 1.0)),
                    to: along(stop.clamp(0.0, 1.0)),
                    albedo,
                    height_multiplier: multiplier,
                    aspect,
                    shape,
                    class_name: "person".to_string(),
                }
            })
            .filter(|t| t.start_frame < self.frames)
            .collect()
    }
}

/// Ground truth for one rendered sprite.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteTruth {
    pub track: usize,
    pub mask: BitMask,
    pub visible: BitMask,
    pub bottom_x: f64,
    pub bottom_y: i32,
    /// Analytic height at the contact point, including the multiplier.
    pub true_height: f64,
    /// Rendered silhouette height in rows.
    pub pixel_height: u32,
    /// Mean brightness factor under the silhouette.
    pub lighting: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    pub frame: Frame,
    pub sprites: Vec<SpriteTruth>,
    /// Ground pixels visibly darkened by some sprite's shadow.
    pub shadow: BitMask,
}

impl GroundTruthFrame {
    pub fn detections(&self, tracks: &[SpriteTrack]) -> Vec<RawDetection> {
        self.sprites
            .iter()
            .filter(|s| !s.visible.is_empty())
            .map(|s| RawDetection {
                frame_index: self.frame.index,
                class_name: tracks[s.track].class_name.clone(),
                confidence: 1.0,
                mask: s.visible.clone(),
            })
            .collect()
    }
}

/// A sprite to draw: silhouette placed in the frame with its own albedo.
#[derive(Debug, Clone)]
pub struct SpriteInstance {
    pub layer: Layer,
    pub albedo: [u8; 3],
}

/// A rendered scene. Frames are rendered on demand.
#[derive(Debug, Clone)]
pub struct SynthScene {
    config: SynthConfig,
    manifest: SceneManifest,
    ground: RgbImage,
    lit: RgbImage,
    /// Most recent renders, so a frame and its detections share one pass.
    recent: Arc<Mutex<VecDeque<Arc<GroundTruthFrame>>>>,
}

const RECENT_FRAMES: usize = 4;

impl SynthScene {
    pub fn new(config: SynthConfig, frame_count: usize) -> Result<Self> {
        config.validate()?;
        let manifest = SceneManifest::new(config.width, config.height, config.fps, frame_count);
        manifest.validate()?;
        let ground = RgbImage::from_fn(config.width, config.height, |c, r| Rgb(ground_albedo(&config, c, r)));
        let h = config.height;
        let lit = RgbImage::from_fn(config.width, h, |c, r| {
            let f = config.brightness_at(c as i32, y_of_row(r, h));
            Rgb(scale(ground.get_pixel(c, r).0, f))
        });
        Ok(Self {
            config,
            manifest,
            ground,
            lit,
            recent: Arc::default(),
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// Unshadowed, unoccluded ground under the brightness field.
    pub fn lit_ground(&self) -> &RgbImage {
        &self.lit
    }

    /// The scene with no sprites.
    pub fn empty_plate(&self) -> RgbImage {
        self.compose(&[]).0
    }

    /// Place a silhouette so its bottom row is centered on `(x, y)` with the
    /// analytic height times `multiplier`.
    pub fn instance(&self, shape: Silhouette, aspect: f64, albedo: [u8; 3], x: f64, y: f64, multiplier: f64) -> Result<SpriteInstance> {
        let h = self.config.plane_height(x, y) * multiplier;
        if h < 1.0 {
            return Err(Error::SynthConfig(format!("({x:.1}, {y:.1}) is off the ground plane")));
        }
        let rows = h.round().max(1.0) as u32;
        let cols = (aspect * rows as f64).round().max(1.0) as u32;
        let mask = shape.mask(cols, rows);
        let pixels = RgbImage::from_pixel(cols, rows, Rgb(albedo));
        let layer = Layer::place(pixels, mask, x, y.round() as i32, self.config.height);
        Ok(SpriteInstance { layer, albedo })
    }

    fn track_instance(&self, track: &SpriteTrack, t: usize) -> Result<Option<(SpriteInstance, f64, [f64; 2])>> {
        let Some(p) = track.position(t) else {
            return Ok(None);
        };
        let inst = self.instance(track.shape, track.aspect, track.albedo, p[0], p[1], track.height_multiplier)?;
        Ok(Some((inst, self.config.plane_height(p[0], p[1]) * track.height_multiplier, p)))
    }

    pub fn render_frame(&self, t: usize) -> Result<GroundTruthFrame> {
        self.check_index(t)?;
        let mut sprites = Vec::new();
        let mut meta = Vec::new();
        for (k, track) in self.config.tracks.iter().enumerate() {
            if let Some((inst, true_height, p)) = self.track_instance(track, t)? {
                sprites.push(inst);
                meta.push((k, true_height, p));
            }
        }
        let (pixels, owner, shadow) = self.compose(&sprites);
        let (w, h) = (self.config.width, self.config.height);
        let truths = sprites
            .iter()
            .zip(meta)
            .enumerate()
            .map(|(i, (inst, (track, true_height, p)))| {
                let mask = inst.layer.frame_mask(w, h);
                let visible = BitMask::from_fn(w, h, |c, r| owner[(r * w + c) as usize] == Owner::Sprite(i));
                let lighting = if mask.is_empty() {
                    self.config.brightness_at(p[0].round() as i32, p[1].round() as i32)
                } else {
                    mask.iter_xy().map(|(x, y)| self.config.brightness_at(x, y)).sum::<f32>() / mask.count() as f32
                };
                let (lo, hi) = crate::layer::row_extent(&inst.layer.mask, inst.layer.mask.height() - 1);
                SpriteTruth {
                    track,
                    bottom_x: inst.layer.col0 as f64 + (lo + hi) as f64 / 2.0,
                    bottom_y: inst.layer.bottom_y,
                    true_height,
                    pixel_height: inst.layer.mask.height(),
                    lighting,
                    mask,
                    visible,
                }
            })
            .collect();
        Ok(GroundTruthFrame {
            frame: Frame { index: t, pixels },
            sprites: truths,
            shadow,
        })
    }

    fn cached_frame(&self, t: usize) -> Result<Arc<GroundTruthFrame>> {
        if let Some(hit) = self.recent.lock().expect("cache lock").iter().find(|g| g.frame.index == t) {
            return Ok(hit.clone());
        }
        let gt = Arc::new(self.render_frame(t)?);
        let mut recent = self.recent.lock().expect("cache lock");
        if recent.len() == RECENT_FRAMES {
            recent.pop_front();
        }
        recent.push_back(gt.clone());
        Ok(gt)
    }

    /// Shadow pixels the renderer would show for `sprites` alone.
    pub fn shadow_truth(&self, sprites: &[SpriteInstance]) -> BitMask {
        self.compose(sprites).2
    }

    /// Draw ground, shadows, boxes and sprites. Returns the image, the owner
    /// of each pixel and the visible darkened-shadow mask.
    pub fn compose(&self, sprites: &[SpriteInstance]) -> (RgbImage, Vec<Owner>, BitMask) {
        let cfg = &self.config;
        let (w, h) = (cfg.width, cfg.height);
        let mut img = self.lit.clone();
        let (k_x, k_y) = cfg.shear();

        let mut cast = BitMask::new(w, h);
        for s in sprites {
            for (c, r, _) in s.layer.frame_pixels(w, h) {
                let (sx, sy) = shear_point(c as i32, y_of_row(r, h), s.layer.bottom_y, k_x, k_y);
                cast.set_xy(sx, sy, true);
            }
        }
        let mut darkened = BitMask::new(w, h);
        for (x, y) in cast.iter_xy() {
            let f = cfg.brightness_at(x, y);
            // an already-dark surface is not darkened further
            if cfg.shadow_gain < f {
                let r = row_of_y(y, h) as u32;
                img.put_pixel(x as u32, r, Rgb(scale(self.ground.get_pixel(x as u32, r).0, cfg.shadow_gain)));
                darkened.set(x as u32, r, true);
            }
        }

        let mut owner = vec![Owner::Ground; (w * h) as usize];
        // farther first; on equal contact rows boxes go behind sprites
        let mut order: Vec<(i32, u8, usize)> = cfg
            .occluders
            .iter()
            .enumerate()
            .map(|(i, o)| (o.bottom_y, 0, i))
            .chain(sprites.iter().enumerate().map(|(i, s)| (s.layer.bottom_y, 1, i)))
            .collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (_, kind, i) in order {
            if kind == 0 {
                let o = &cfg.occluders[i];
                for y in o.bottom_y.max(0)..o.top_y.min(h as i32) {
                    let r = row_of_y(y, h) as u32;
                    for x in o.x0.max(0)..o.x1.min(w as i32) {
                        img.put_pixel(x as u32, r, Rgb(scale(o.color, cfg.brightness_at(x, y))));
                        owner[(r * w + x as u32) as usize] = Owner::Occluder(i);
                    }
                }
            } else {
                let s = &sprites[i];
                for (c, r, _) in s.layer.frame_pixels(w, h) {
                    let f = cfg.brightness_at(c as i32, y_of_row(r, h));
                    img.put_pixel(c, r, Rgb(scale(s.albedo, f)));
                    owner[(r * w + c) as usize] = Owner::Sprite(i);
                }
            }
        }
        for (i, o) in owner.iter().enumerate() {
            if *o != Owner::Ground && darkened.bits()[i] {
                darkened.set(i as u32 % w, i as u32 / w, false);
            }
        }
        (img, owner, darkened)
    }

    /// Write frames, detections, `scene.json` and `truth.json` to `out_dir`.
    pub fn export(&self, out_dir: &Path) -> Result<SceneManifest> {
        let m = &self.manifest;
        (0..m.frame_count).into_par_iter().try_for_each(|t| {
            let gt = self.render_frame(t)?;
            save_png(&out_dir.join(m.frame_path(t)), &gt.frame.pixels)?;
            write_detections(&out_dir.join(m.mask_path(t)), &gt.detections(&self.config.tracks))
        })?;
        write_manifest(&out_dir.join(Dataset::MANIFEST_FILE), m)?;
        let truth = serde_json::to_vec_pretty(&self.config.truth()).expect("truth serializes");
        write_file(&out_dir.join(SceneTruth::FILE), &truth)?;
        Ok(m.clone())
    }
}

/// Who drew a pixel last.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Owner {
    Ground,
    Occluder(usize),
    Sprite(usize),
}

/// Render `frame_count` frames of `config` into `out_dir`.
pub fn export_scene(config: SynthConfig, frame_count: usize, out_dir: &Path) -> Result<SceneManifest> {
    SynthScene::new(config, frame_count)?.export(out_dir)
}

impl SceneSource for SynthScene {
    fn manifest(&self) -> &SceneManifest {
        &self.manifest
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self.cached_frame(index)?.frame.clone())
    }

    fn detections(&self, index: usize, min_confidence: f32) -> Result<Vec<RawDetection>> {
        let gt = self.cached_frame(index)?;
        Ok(gt
            .detections(&self.config.tracks)
            .into_iter()
            .filter(|d| d.confidence >= min_confidence && self.manifest.class_whitelist.contains(&d.class_name))
            .collect())
    }
}

fn scale(c: [u8; 3], f: f32) -> [u8; 3] {
    c.map(|v| (v as f32 * f).round().clamp(0.0, 255.0) as u8)
}

fn ground_albedo(cfg: &SynthConfig, col: u32, row: u32) -> [u8; 3] {
    let amp = cfg.ground_texture as i32;
    let offset = if amp == 0 {
        0
    } else {
        let mut z = (col as u64) << 32 | row as u64;
        z = z.wrapping_add(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z % (2 * amp as u64 + 1)) as i32 - amp
    };
    cfg.ground_color.map(|v| (v as i32 + offset).clamp(0, 255) as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(from: [f64; 2], to: [f64; 2], frames: usize) -> SpriteTrack {
        SpriteTrack {
            start_frame: 0,
            end_frame: frames,
            from,
            to,
            albedo: [220, 200, 240],
            height_multiplier: 1.0,
            aspect: 0.4,
            shape: Silhouette::Keyhole,
            class_name: "person".into(),
        }
    }

    #[test]
    fn empty_schedule_renders_background() {
        let scene = SynthScene::new(SynthConfig::new(64, 48), 1).unwrap();
        let gt = scene.render_frame(0).unwrap();
        assert_eq!(&gt.frame.pixels, scene.lit_ground());
        assert!(gt.sprites.is_empty() && gt.shadow.is_empty());
    }

    #[test]
    fn heights_follow_perspective() {
        // with c = 0 and a = 0, h is proportional to the distance below the horizon
        let mut cfg = SynthConfig::new(200, 200);
        cfg.ground_plane[0] = 0.0;
        let (_, cy) = cfg.principal_point();
        let near = cfg.plane_height(100.0, cy - 80.0);
        let far = cfg.plane_height(100.0, cy - 40.0);
        assert!((near / far - 2.0).abs() < 1e-12);
        // h = H f / Z with Z from the plane
        let [_, b, _] = cfg.ground_plane;
        let v = -80.0;
        let z = 1.0 / (b * v / cfg.focal_length);
        assert!((near - cfg.person_height * cfg.focal_length / z).abs() < 1e-9);
    }

    #[test]
    fn rendered_heights_match_plane() {
        let mut cfg = SynthConfig::new(160, 120);
        cfg.tracks = vec![track([20.0, 3.0], [140.0, 25.0], 30)];
        let scene = SynthScene::new(cfg.clone(), 30).unwrap();
        for t in 0..30 {
            let gt = scene.render_frame(t).unwrap();
            let s = &gt.sprites[0];
            let p = cfg.tracks[0].position(t).unwrap();
            let expect = cfg.plane_height(p[0], p[1]);
            assert!((s.pixel_height as f64 - expect).abs() <= 0.5);
            assert!((s.bottom_x - p[0]).abs() <= 0.5 + 1e-9);
            assert_eq!(s.visible, s.mask);
        }
    }

    #[test]
    fn occluder_hides_farther_sprite() {
        let mut cfg = SynthConfig::new(120, 100);
        cfg.occluders = vec![Occluder {
            x0: 40,
            x1: 80,
            bottom_y: 5,
            top_y: 40,
            color: [40, 60, 160],
        }];
        cfg.tracks = vec![track([60.0, 15.0], [60.0, 15.0], 1), track([20.0, 2.0], [20.0, 2.0], 1)];
        let scene = SynthScene::new(cfg, 1).unwrap();
        let gt = scene.render_frame(0).unwrap();
        let behind = &gt.sprites[0];
        assert!(behind.visible.is_subset_of(&behind.mask));
        for (x, y) in behind.mask.iter_xy() {
            let in_box = (40..80).contains(&x) && (5..40).contains(&y);
            assert_eq!(behind.visible.contains_xy(x, y), !in_box);
        }
        assert!(behind.visible.count() < behind.mask.count());
    }

    #[test]
    fn shadow_never_double_darkens() {
        let mut cfg = SynthConfig::new(120, 100);
        cfg.brightness = vec![BrightnessRegion {
            x0: 0,
            y0: 0,
            x1: 120,
            y1: 100,
            factor: 0.4,
        }];
        cfg.tracks = vec![track([60.0, 10.0], [60.0, 10.0], 1)];
        let scene = SynthScene::new(cfg, 1).unwrap();
        let gt = scene.render_frame(0).unwrap();
        assert!(gt.shadow.is_empty());
        let ground = scene.lit_ground();
        let mask = &gt.sprites[0].mask;
        for (c, r) in BitMask::full(120, 100).iter_ones() {
            if !mask.get(c, r) {
                assert_eq!(gt.frame.pixels.get_pixel(c, r), ground.get_pixel(c, r));
            }
        }
    }

    #[test]
    fn shadow_darkens_lit_ground_by_gain() {
        let mut cfg = SynthConfig::new(120, 100);
        cfg.tracks = vec![track([40.0, 10.0], [40.0, 10.0], 1)];
        let scene = SynthScene::new(cfg.clone(), 1).unwrap();
        let gt = scene.render_frame(0).unwrap();
        assert!(!gt.shadow.is_empty());
        for (c, r) in gt.shadow.iter_ones() {
            let base = ground_albedo(&cfg, c, r);
            assert_eq!(gt.frame.pixels.get_pixel(c, r).0, scale(base, 0.5));
        }
    }

    #[test]
    fn off_plane_track_is_rejected() {
        let mut cfg = SynthConfig::new(100, 100);
        cfg.tracks = vec![track([50.0, 10.0], [50.0, 90.0], 5)];
        assert!(matches!(SynthScene::new(cfg, 5), Err(Error::SynthConfig(_))));
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut cfg = SynthConfig::new(96, 72);
        cfg.seed = 9;
        cfg.tracks = WalkerSpec::new(&cfg, 20).generate();
        let a = SynthScene::new(cfg.clone(), 20).unwrap();
        let b = SynthScene::new(cfg, 20).unwrap();
        for t in [0, 7, 19] {
            assert_eq!(a.render_frame(t).unwrap(), b.render_frame(t).unwrap());
        }
    }

    #[test]
    fn walkers_stay_in_schedule() {
        let cfg = SynthConfig::new(200, 150);
        let spec = WalkerSpec::new(&cfg, 100);
        let tracks = spec.generate();
        assert!(!tracks.is_empty());
        for t in &tracks {
            assert!(t.start_frame < t.end_frame && t.end_frame <= 100);
            for p in [t.from, t.to] {
                assert!(p[1] >= spec.band.0 - 1e-9 && p[1] <= spec.band.1 + 1e-9);
            }
        }
        let mut cfg = cfg;
        cfg.tracks = tracks;
        cfg.validate().unwrap();
    }

    #[test]
    fn keyhole_has_full_bottom_row_and_spine() {
        let m = Silhouette::Keyhole.mask(9, 30);
        assert!((0..9).all(|c| m.get(c, 29)));
        assert!((0..30).all(|r| m.get(4, r)));
        assert!(m.count() < 9 * 30);
    }
}
