//! Recover a shaded region from probe colors and relight a cut-out moved
//! into it.
//!
//!     cargo run --release --example lighting_map [out_dir]

use image::{Rgb, RgbImage};
use scene_probe::dataio::BitMask;
use scene_probe::lighting::{build_lighting_map, lighting_factor, relight, LightingAnchor};
use scene_probe::occlusion::{observe_scene, ObserveConfig};
use scene_probe::raster::save_png;
use scene_probe::synth::{BrightnessRegion, SynthConfig, SynthScene, WalkerSpec};

fn main() -> scene_probe::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("probe-lighting"), Into::into);

    let mut cfg = SynthConfig::new(320, 240);
    cfg.brightness.push(BrightnessRegion {
        x0: 160,
        y0: 0,
        x1: 320,
        y1: 240,
        factor: 0.4,
    });
    let mut walkers = WalkerSpec::new(&cfg, 200);
    walkers.duration = (20, 40);
    cfg.tracks = walkers.generate();
    let scene = SynthScene::new(cfg, 200)?;

    let observations = observe_scene(&scene, &ObserveConfig::default())?;
    let lmap = build_lighting_map(320, 240, &observations);
    save_png(&out.join("lighting.png"), &lmap.visualize())?;

    let region = |x0: u32| BitMask::from_fn(320, 240, |c, r| c >= x0 && c < x0 + 40 && (170..200).contains(&r));
    let lit = lighting_factor(&lmap, &region(40)).expect("probes crossed the lit side");
    let shaded = lighting_factor(&lmap, &region(240)).expect("probes crossed the shaded side");
    println!("lit side {lit:.0?}, shaded side {shaded:.0?}");

    let sprite = RgbImage::from_pixel(10, 30, Rgb([200, 180, 160]));
    let moved = relight(&sprite, &LightingAnchor::new(lit)?, shaded);
    println!("cut-out {:?} becomes {:?} in the shade", sprite.get_pixel(0, 0).0, moved.get_pixel(0, 0).0);
    println!("wrote {}", out.display());
    Ok(())
}
