//! Scene loading and the on-disk interchange formats.
//!
//! A scene directory holds `scene.json`, one PNG per frame and one JSON-lines
//! detection file per frame:
//!
//! ```text
//! scene/
//! ├── scene.json
//! ├── frames/00000.png
//! └── masks/00000.jsonl   {"class":"person","confidence":0.93,"runs":[...]}
//! ```

mod mask;

use std::io::BufRead;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use mask::{BitMask, RegionMask};

use crate::error::{Error, Result};
use crate::raster;

pub const DEFAULT_SPLIT_FRACTION: f64 = 0.95;

/// Detection confidence used for occlusion and lighting probes.
pub const PROBE_CONFIDENCE: f32 = 0.75;
/// Detection confidence used for shadow probes.
pub const SHADOW_CONFIDENCE: f32 = 0.8;
/// Detection confidence used for height samples (persons only).
pub const PERSON_CONFIDENCE: f32 = 0.9;

pub fn default_class_whitelist() -> Vec<String> {
    [
        "person",
        "bicycle",
        "car",
        "motorcycle",
        "bus",
        "truck",
        "backpack",
        "umbrella",
        "handbag",
        "tie",
        "suitcase",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn default_split() -> f64 {
    DEFAULT_SPLIT_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frame_count: usize,
    pub frame_path_pattern: String,
    pub mask_path_pattern: String,
    #[serde(default = "default_class_whitelist")]
    pub class_whitelist: Vec<String>,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
}

impl SceneManifest {
    pub fn new(width: u32, height: u32, fps: f64, frame_count: usize) -> Self {
        Self {
            width,
            height,
            fps,
            frame_count,
            frame_path_pattern: "frames/{frame:05}.png".into(),
            mask_path_pattern: "masks/{frame:05}.jsonl".into(),
            class_whitelist: default_class_whitelist(),
            split_fraction: DEFAULT_SPLIT_FRACTION,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::EmptyScene);
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Manifest(format!(
                "image size must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Manifest(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::Manifest(format!(
                "split_fraction must be in (0, 1], got {}",
                self.split_fraction
            )));
        }
        if self.width > i16::MAX as u32 || self.height > i16::MAX as u32 {
            return Err(Error::Manifest("image dimensions exceed 32767".into()));
        }
        Ok(())
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Number of frames in the training prefix (at least one).
    pub fn train_frames(&self) -> usize {
        ((self.frame_count as f64 * self.split_fraction).floor() as usize).clamp(1, self.frame_count)
    }

    /// One second of frames, the probing median window.
    pub fn one_second_window(&self) -> usize {
        (self.fps.round() as usize).max(1)
    }

    pub fn frame_path(&self, index: usize) -> String {
        resolve_pattern(&self.frame_path_pattern, index)
    }

    pub fn mask_path(&self, index: usize) -> String {
        resolve_pattern(&self.mask_path_pattern, index)
    }
}

/// Substitute `{frame}` or `{frame:0N}` in a path template.
pub fn resolve_pattern(pattern: &str, index: usize) -> String {
    let mut out = String::with_capacity(pattern.len() + 8);
    let mut rest = pattern;
    while let Some(start) = rest.find("{frame") {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let Some(end) = tail.find('}') else {
            out.push_str(tail);
            return out;
        };
        let spec = &tail["{frame".len()..end];
        match spec.strip_prefix(":0").and_then(|w| w.parse::<usize>().ok()) {
            Some(width) => out.push_str(&format!("{index:0width$}")),
            None if spec.is_empty() => out.push_str(&index.to_string()),
            None => out.push_str(&tail[..=end]),
        }
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub pixels: RgbImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawDetection {
    pub frame_index: usize,
    pub class_name: String,
    pub confidence: f32,
    pub mask: BitMask,
}

/// One line of a per-frame detection file.
#[derive(Debug, Serialize, Deserialize)]
pub struct DetectionLine {
    #[serde(rename = "class")]
    pub class_name: String,
    pub confidence: f32,
    pub runs: Vec<u32>,
}

impl DetectionLine {
    pub fn from_detection(d: &RawDetection) -> Self {
        Self {
            class_name: d.class_name.clone(),
            confidence: d.confidence,
            runs: d.mask.encode(),
        }
    }
}

/// Anything that can serve frames and detections of one scene.
pub trait SceneSource: Sync {
    fn manifest(&self) -> &SceneManifest;

    fn frame(&self, index: usize) -> Result<Frame>;

    /// Detections with `confidence >= min_confidence` and a whitelisted
    /// class, in file order.
    fn detections(&self, index: usize, min_confidence: f32) -> Result<Vec<RawDetection>>;

    fn check_index(&self, index: usize) -> Result<()> {
        let count = self.manifest().frame_count;
        if index >= count {
            return Err(Error::FrameOutOfRange { index, count });
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<SceneManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    manifest.validate()?;
    let root = path.parent().unwrap_or(Path::new("."));
    let frame0 = root.join(manifest.frame_path(0));
    if !frame0.is_file() {
        return Err(Error::MissingFrame(frame0));
    }
    let mask0 = root.join(manifest.mask_path(0));
    if !mask0.is_file() {
        return Err(Error::MissingMaskFile(mask0));
    }
    Ok(manifest)
}

/// A scene directory on disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    manifest: SceneManifest,
}

impl Dataset {
    pub const MANIFEST_FILE: &'static str = "scene.json";

    /// Open a scene directory (or a path to its `scene.json`).
    pub fn open(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() {
            path.join(Self::MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let manifest = load_manifest(&manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { root, manifest })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl SceneSource for Dataset {
    fn manifest(&self) -> &SceneManifest {
        &self.manifest
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.check_index(index)?;
        let path = self.root.join(self.manifest.frame_path(index));
        if !path.is_file() {
            return Err(Error::MissingFrame(path));
        }
        let pixels = raster::load_rgb(&path)?;
        raster::check_dims(self.manifest.dimensions(), pixels.dimensions())?;
        Ok(Frame { index, pixels })
    }

    fn detections(&self, index: usize, min_confidence: f32) -> Result<Vec<RawDetection>> {
        self.check_index(index)?;
        let path = self.root.join(self.manifest.mask_path(index));
        let file = match std::fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::MissingMaskFile(path))
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        parse_detections(
            std::io::BufReader::new(file),
            &path,
            index,
            &self.manifest,
            min_confidence,
        )
    }
}

pub(crate) fn parse_detections(
    reader: impl BufRead,
    path: &Path,
    frame_index: usize,
    manifest: &SceneManifest,
    min_confidence: f32,
) -> Result<Vec<RawDetection>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DetectionLine = serde_json::from_str(&line).map_err(|e| Error::json(path, e))?;
        if !(0.0..=1.0).contains(&parsed.confidence) {
            return Err(Error::Format(format!(
                "confidence {} outside [0, 1] in {}",
                parsed.confidence,
                path.display()
            )));
        }
        if parsed.confidence < min_confidence
            || !manifest.class_whitelist.iter().any(|c| c == &parsed.class_name)
        {
            continue;
        }
        let mask = BitMask::decode(&parsed.runs, manifest.width, manifest.height)?;
        out.push(RawDetection {
            frame_index,
            class_name: parsed.class_name,
            confidence: parsed.confidence,
            mask,
        });
    }
    Ok(out)
}

/// Write one frame's detections as JSON lines.
pub fn write_detections(path: &Path, detections: &[RawDetection]) -> Result<()> {
    let mut text = String::new();
    for d in detections {
        let line = serde_json::to_string(&DetectionLine::from_detection(d))
            .map_err(|e| Error::json(path, e))?;
        text.push_str(&line);
        text.push('\n');
    }
    raster::write_file(path, text.as_bytes())
}

pub fn write_manifest(path: &Path, manifest: &SceneManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::json(path, e))?;
    raster::write_file(path, text.as_bytes())
}
