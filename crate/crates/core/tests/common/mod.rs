#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use image::{Rgba, RgbaImage};
use scene_probe::composer::{build_scene_dir, BuildConfig};
use scene_probe::raster::encode_png_rgba;
use scene_probe::synth::{export_scene, SynthConfig, WalkerSpec};

pub const BUILT: &str = "built";
pub const UNBUILT: &str = "unbuilt";

pub fn small_config(seed: u64, frames: usize) -> SynthConfig {
    let mut cfg = SynthConfig::new(200, 150);
    cfg.seed = seed;
    let mut spec = WalkerSpec::new(&cfg, frames);
    spec.duration = (20, 50);
    spec.concurrent = 2.0;
    cfg.tracks = spec.generate();
    cfg
}

/// A scenes directory with one built and one unbuilt scene, shared by the
/// tests of one binary.
pub fn scenes() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        export_scene(small_config(5, 160), 160, &dir.path().join(BUILT)).unwrap();
        build_scene_dir(&dir.path().join(BUILT), &BuildConfig::default()).unwrap();
        export_scene(small_config(6, 40), 40, &dir.path().join(UNBUILT)).unwrap();
        dir
    })
    .path()
}

pub fn scene(name: &str) -> PathBuf {
    scenes().join(name)
}

pub fn sprite_png(w: u32, h: u32, color: [u8; 3]) -> Vec<u8> {
    let img = RgbaImage::from_fn(w, h, |c, r| {
        if c > 0 && r > 0 && c + 1 < w && r + 1 < h {
            Rgba([color[0], color[1], color[2], 255])
        } else {
            Rgba([0, 0, 0, 0])
        }
    });
    encode_png_rgba(&img).unwrap()
}
